// gcul — train, unlearn, retrain and audit node-classification GNNs.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric error.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "gcul/experiment.hpp"

namespace {

using namespace gcul;

ExperimentConfig load_config(const std::string& config_path, std::uint64_t* seed_override,
                             std::string* out_override) {
  ExperimentConfig cfg = config_path.empty() ? experiment_config_from(KeyValueConfig::parse_text(""))
                                             : load_experiment_config(config_path);
  if (seed_override) {
    cfg.seed = *seed_override;
    cfg.apply_seed();
  }
  if (out_override && !out_override->empty()) cfg.out_dir = *out_override;
  return cfg;
}

NodePartition partition_of(const ExperimentConfig& cfg, const Graph& graph, double ratio) {
  return split_nodes(graph, cfg.seed, cfg.test_fraction, ratio, cfg.eval_fraction);
}

int cmd_ingest(const std::string& content_path, const std::string& cites_path,
               const std::string& out_dir) {
  std::ifstream content(content_path);
  if (!content) throw DataError("cannot open " + content_path);
  std::ifstream cites(cites_path);
  if (!cites) throw DataError("cannot open " + cites_path);
  LoadStats stats;
  Graph g = load_planetoid(content, cites, &stats);
  save_graph(g, out_dir);
  std::cout << manifest_text(g);
  std::cout << "dropped_edge_lines=" << stats.dropped_edge_lines << "\n";
  std::cout << "removed_self_loops=" << stats.removed_self_loops << "\n";
  std::cout << "removed_duplicate_edges=" << stats.removed_duplicate_edges << "\n";
  return 0;
}

int cmd_synth(const SyntheticSpec& spec, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ostringstream content, cites;
  write_synthetic_planetoid(spec, content, cites);
  write_text_atomic(std::filesystem::path(out_dir) / "synthetic.content", content.str());
  write_text_atomic(std::filesystem::path(out_dir) / "synthetic.cites", cites.str());
  std::cout << "wrote " << out_dir << "/synthetic.content and .cites\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
  Graph graph = load_dataset(cfg);
  NodePartition partition = partition_of(cfg, graph, cfg.unlearn_fraction);
  TrainResult result = train(graph, partition, cfg.gnn, cfg.train);
  std::filesystem::create_directories(cfg.out_dir);
  save_checkpoint(result.model, cfg.out_dir / "original.ckpt");
  write_text_atomic(cfg.out_dir / "train_log.csv", train_log_csv(result.log));
  std::cout << "test_acc=" << format_double(accuracy(result.model, graph, partition.test_nodes))
            << "\n";
  return 0;
}

int cmd_retrain(const ExperimentConfig& cfg) {
  Graph graph = load_dataset(cfg);
  NodePartition partition = partition_of(cfg, graph, cfg.unlearn_fraction);
  TrainResult result =
      retrain_reference(graph, partition, cfg.gnn, cfg.train, cfg.retain_structure);
  std::filesystem::create_directories(cfg.out_dir);
  save_checkpoint(result.model, cfg.out_dir / "retrained.ckpt");
  const double test_acc = accuracy(result.model, graph, partition.test_nodes);
  const double unlearn_acc = accuracy(result.model, graph, partition.unlearn_nodes);
  std::cout << "test_acc=" << format_double(test_acc) << "\n";
  std::cout << "unlearn_acc=" << format_double(unlearn_acc) << "\n";
  std::cout << "unlearn_score=" << format_double(std::abs(test_acc - unlearn_acc) * 100.0)
            << "\n";
  return 0;
}

int cmd_unlearn(const ExperimentConfig& cfg, const std::string& checkpoint,
                bool no_reconstruction) {
  Graph graph = load_dataset(cfg);
  NodePartition partition = partition_of(cfg, graph, cfg.unlearn_fraction);
  const auto ckpt_path =
      checkpoint.empty() ? (cfg.out_dir / "original.ckpt").string() : checkpoint;
  GnnModel model = load_checkpoint(ckpt_path);
  UnlearnConfig ucfg = cfg.unlearn;
  ucfg.k = model.config().num_layers;
  if (no_reconstruction) ucfg.reconstruction_enabled = false;
  UnlearnReport report = run_contrastive_unlearning(model, graph, partition, ucfg);
  std::filesystem::create_directories(cfg.out_dir);
  save_checkpoint(model, cfg.out_dir / "unlearned.ckpt");
  write_text_atomic(cfg.out_dir / "unlearn_report.json", report.to_json(ucfg));
  std::cout << report.to_json(ucfg);
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint) {
  Graph graph = load_dataset(cfg);
  NodePartition partition = partition_of(cfg, graph, cfg.unlearn_fraction);
  GnnModel model = load_checkpoint(checkpoint);
  Propagator prop = make_propagator(model.config().arch, graph);
  ForwardResult fw = forward_all(model, graph, prop);
  const Matrix& logits = fw.logits.value();
  std::cout << "train_acc="
            << format_double(accuracy_from_logits(logits, graph, partition.train_nodes)) << "\n";
  std::cout << "test_acc="
            << format_double(accuracy_from_logits(logits, graph, partition.test_nodes)) << "\n";
  std::cout << "unlearn_acc="
            << format_double(accuracy_from_logits(logits, graph, partition.unlearn_nodes)) << "\n";
  std::cout << "eval_acc="
            << format_double(accuracy_from_logits(logits, graph, partition.eval_nodes)) << "\n";
  return 0;
}

int cmd_mia(const ExperimentConfig& cfg, const std::string& target_ckpt, int jobs) {
  Graph graph = load_dataset(cfg);
  NodePartition partition = partition_of(cfg, graph, cfg.unlearn_fraction);
  GnnModel target = load_checkpoint(target_ckpt);

  Rng pick = Rng(cfg.attack.seed).fork(0xca9d);
  std::vector<int> test_pool = partition.test_nodes;
  pick.shuffle(test_pool);
  const std::size_t n_nonmember = std::min(partition.unlearn_nodes.size(), test_pool.size());
  std::vector<int> eval_nodes = partition.unlearn_nodes;
  eval_nodes.insert(eval_nodes.end(), test_pool.begin(), test_pool.begin() + n_nonmember);
  std::vector<int> member_labels(partition.unlearn_nodes.size(), 1);
  member_labels.resize(eval_nodes.size(), 0);

  AttackConfig acfg = cfg.attack;
  acfg.jobs = jobs;
  ShadowEnsemble shadows = train_shadows(graph, partition, eval_nodes, cfg.gnn, acfg);
  MiaResult mia = mia_auc(lira_scores(graph, shadows, target, eval_nodes, acfg), member_labels);
  std::filesystem::create_directories(cfg.out_dir);
  write_text_atomic(cfg.out_dir / "roc.csv", mia.roc_csv());
  write_text_atomic(cfg.out_dir / "mia.json", mia.to_json());
  std::cout << mia.to_json();
  return 0;
}

int cmd_experiment(const ExperimentConfig& cfg, const ExperimentOptions& opts) {
  ExperimentResult result = run_experiment(cfg, opts);
  std::cout << summary_csv(result.rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contrastive node unlearning for graph neural networks"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 1;
  bool no_reconstruction = false;
  bool retain_structure = false;
  std::vector<double> ratios;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config file");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t v) { seed = v; seed_set = true; }, "global seed override");
  };

  auto* ingest = app.add_subcommand("ingest", "convert raw content/cites files");
  std::string content_path, cites_path, ingest_out;
  ingest->add_option("content", content_path, "content file")->required();
  ingest->add_option("cites", cites_path, "cites file")->required();
  ingest->add_option("out", ingest_out, "output dataset directory")->required();

  auto* synth = app.add_subcommand("synth", "generate a synthetic citation dataset");
  gcul::SyntheticSpec synth_spec;
  std::string synth_out = "data/synthetic";
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--nodes", synth_spec.num_nodes, "node count");
  synth->add_option("--classes", synth_spec.num_classes, "class count");
  synth->add_option("--features", synth_spec.feature_dim, "feature dimension");
  synth->add_option("--avg-degree", synth_spec.avg_degree, "mean degree");
  synth->add_option("--homophily", synth_spec.homophily, "intra-class edge fraction");
  synth->add_option("--gen-seed", synth_spec.seed, "generator seed");

  auto* train_cmd = app.add_subcommand("train", "train the original model");
  add_common(train_cmd);

  auto* retrain_cmd = app.add_subcommand("retrain", "retrain-from-scratch reference");
  add_common(retrain_cmd);
  retrain_cmd->add_flag("--retain-structure", retain_structure,
                        "keep unlearn nodes in the graph, drop only their supervision");

  auto* unlearn_cmd = app.add_subcommand("unlearn", "run contrastive unlearning");
  add_common(unlearn_cmd);
  unlearn_cmd->add_option("--checkpoint", checkpoint, "trained model checkpoint");
  unlearn_cmd->add_flag("--no-reconstruction", no_reconstruction,
                        "disable neighborhood reconstruction");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

  auto* mia_cmd = app.add_subcommand("mia", "membership-inference audit of a checkpoint");
  add_common(mia_cmd);
  mia_cmd->add_option("--checkpoint", checkpoint, "target model checkpoint")->required();
  mia_cmd->add_option("--jobs", jobs, "parallel shadow trainings");

  auto* exp_cmd = app.add_subcommand("experiment", "full pipeline with summary table");
  add_common(exp_cmd);
  exp_cmd->add_option("--ratio", ratios, "unlearn ratio(s); repeat for a sweep");
  exp_cmd->add_flag("--no-reconstruction", no_reconstruction,
                    "disable neighborhood reconstruction");
  exp_cmd->add_flag("--retain-structure", retain_structure, "retrain keeps graph structure");
  exp_cmd->add_option("--jobs", jobs, "parallel shadow trainings");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage
  }

  try {
    if (ingest->parsed()) return cmd_ingest(content_path, cites_path, ingest_out);
    if (synth->parsed()) return cmd_synth(synth_spec, synth_out);

    gcul::ExperimentConfig cfg =
        load_config(config_path, seed_set ? &seed : nullptr, &out_dir);
    if (retain_structure) cfg.retain_structure = true;

    if (train_cmd->parsed()) return cmd_train(cfg);
    if (retrain_cmd->parsed()) return cmd_retrain(cfg);
    if (unlearn_cmd->parsed()) return cmd_unlearn(cfg, checkpoint, no_reconstruction);
    if (eval_cmd->parsed()) return cmd_eval(cfg, checkpoint);
    if (mia_cmd->parsed()) return cmd_mia(cfg, checkpoint, jobs);
    if (exp_cmd->parsed()) {
      gcul::ExperimentOptions opts;
      opts.ratios = ratios;
      opts.no_reconstruction = no_reconstruction;
      opts.jobs = jobs;
      return cmd_experiment(cfg, opts);
    }
  } catch (const gcul::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const gcul::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const gcul::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
