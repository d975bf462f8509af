#include "gcul/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gcul {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_text(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    cfg.values_[section.empty() ? key : section + "." + key] = value;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str());
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected a number, got '" + it->second + "'");
  }
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  const double v = get_double(key, fallback);
  const int i = static_cast<int>(v);
  if (static_cast<double>(i) != v) throw ConfigError("config key " + key + ": expected an integer");
  return i;
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected an unsigned integer");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError("config key " + key + ": expected true/false");
}

void ExperimentConfig::apply_seed() {
  train.seed = splitmix64(seed ^ 0x747261696eULL);
  unlearn.seed = splitmix64(seed ^ 0x756e6c65ULL);
  attack.seed = splitmix64(seed ^ 0x6174746bULL);
  attack.shadow_train.seed = attack.seed;
  if (synthetic_spec.seed == 0) synthetic_spec.seed = splitmix64(seed ^ 0x73796eULL);
}

ExperimentConfig experiment_config_from(const KeyValueConfig& kv) {
  ExperimentConfig cfg;
  cfg.content_path = kv.get_string("dataset.content", "");
  cfg.cites_path = kv.get_string("dataset.cites", "");
  cfg.dataset_dir = kv.get_string("dataset.dir", "");
  cfg.synthetic = kv.get_bool("dataset.synthetic", false);
  cfg.synthetic_spec.num_nodes = kv.get_int("dataset.synthetic_nodes", cfg.synthetic_spec.num_nodes);
  cfg.synthetic_spec.num_classes =
      kv.get_int("dataset.synthetic_classes", cfg.synthetic_spec.num_classes);
  cfg.synthetic_spec.feature_dim =
      kv.get_int("dataset.synthetic_features", cfg.synthetic_spec.feature_dim);
  cfg.synthetic_spec.avg_degree =
      kv.get_double("dataset.synthetic_avg_degree", cfg.synthetic_spec.avg_degree);
  cfg.synthetic_spec.homophily =
      kv.get_double("dataset.synthetic_homophily", cfg.synthetic_spec.homophily);
  cfg.synthetic_spec.features_per_node =
      kv.get_int("dataset.synthetic_features_per_node", cfg.synthetic_spec.features_per_node);
  cfg.synthetic_spec.feature_noise =
      kv.get_double("dataset.synthetic_feature_noise", cfg.synthetic_spec.feature_noise);
  cfg.synthetic_spec.seed = kv.get_u64("dataset.synthetic_seed", 0);
  cfg.row_normalize = kv.get_bool("dataset.row_normalize", true);
  cfg.test_fraction = kv.get_double("dataset.test_fraction", 0.1);
  cfg.unlearn_fraction = kv.get_double("dataset.unlearn_fraction", 0.1);
  cfg.eval_fraction = kv.get_double("dataset.eval_fraction", 0.5);

  cfg.gnn.arch = parse_arch(kv.get_string("model.arch", "gcn"));
  cfg.gnn.num_layers = kv.get_int("model.num_layers", 2);
  cfg.gnn.hidden_dim = kv.get_int("model.hidden_dim", 64);
  cfg.gnn.embedding_dim = kv.get_int("model.embedding_dim", 64);
  cfg.gnn.dropout = kv.get_double("model.dropout", 0.5);
  cfg.gnn.gin_eps = kv.get_double("model.gin_eps", 0.0);

  cfg.train.max_epochs = kv.get_int("train.max_epochs", 500);
  cfg.train.learning_rate = kv.get_double("train.learning_rate", 5e-3);
  cfg.train.weight_decay = kv.get_double("train.weight_decay", 5e-4);
  cfg.train.patience = kv.get_int("train.patience", 50);

  cfg.unlearn.tau = kv.get_double("unlearn.tau", 0.5);
  cfg.unlearn.beta = kv.get_double("unlearn.beta", 8.0);
  cfg.unlearn.gamma = kv.get_double("unlearn.gamma", 1.0);
  cfg.unlearn.push_scale = kv.get_double("unlearn.push_scale", 2.5);
  cfg.unlearn.repeat = kv.get_int("unlearn.repeat", 2);
  const int batch = kv.get_int("unlearn.batch_size", 128);
  cfg.unlearn.batch_size_unlearn = kv.get_int("unlearn.batch_size_unlearn", batch);
  cfg.unlearn.batch_size_remain = kv.get_int("unlearn.batch_size_remain", batch);
  cfg.unlearn.k = kv.get_int("unlearn.k", cfg.gnn.num_layers);
  cfg.unlearn.max_rounds = kv.get_int("unlearn.max_rounds", 50);
  cfg.unlearn.learning_rate = kv.get_double("unlearn.learning_rate", 5e-3);
  cfg.unlearn.weight_decay = kv.get_double("unlearn.weight_decay", cfg.train.weight_decay);
  cfg.unlearn.warmup_steps = kv.get_int("unlearn.warmup_steps", 30);
  cfg.unlearn.normalize_embeddings = kv.get_bool("unlearn.normalize_embeddings", true);
  cfg.unlearn.tau_outside_exp = kv.get_bool("unlearn.tau_outside_exp", false);
  cfg.unlearn.reconstruction_enabled = kv.get_bool("unlearn.reconstruction", true);

  cfg.attack_enabled = kv.get_bool("attack.enabled", true);
  cfg.attack.n_shadow = kv.get_int("attack.n_shadow", 16);
  cfg.attack.shadow_train.max_epochs = kv.get_int("attack.shadow_max_epochs", 200);
  cfg.attack.shadow_train.patience = kv.get_int("attack.shadow_patience", 30);
  cfg.attack.shadow_train.learning_rate =
      kv.get_double("attack.shadow_learning_rate", cfg.train.learning_rate);
  cfg.attack.shadow_train.weight_decay =
      kv.get_double("attack.shadow_weight_decay", cfg.train.weight_decay);

  cfg.retain_structure = kv.get_bool("experiment.retain_structure", false);
  cfg.seed = kv.get_u64("experiment.seed", 1);
  cfg.out_dir = kv.get_string("experiment.out", "run");
  cfg.apply_seed();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return experiment_config_from(KeyValueConfig::parse_file(path));
}

Graph load_dataset(const ExperimentConfig& cfg) {
  Graph g;
  if (cfg.synthetic) {
    g = make_synthetic_graph(cfg.synthetic_spec);
  } else if (!cfg.dataset_dir.empty()) {
    g = load_graph_dir(cfg.dataset_dir);
  } else if (!cfg.content_path.empty() && !cfg.cites_path.empty()) {
    std::ifstream content(cfg.content_path);
    if (!content) throw DataError("cannot open " + cfg.content_path.string());
    std::ifstream cites(cfg.cites_path);
    if (!cites) throw DataError("cannot open " + cfg.cites_path.string());
    g = load_planetoid(content, cites);
  } else {
    throw ConfigError("no dataset configured: set dataset.dir, dataset.content/cites, or dataset.synthetic");
  }
  if (cfg.row_normalize) g = row_normalize_features(std::move(g));
  return g;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp + " for writing");
    out << text;
    if (!out) throw DataError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << "ratio,method,test_acc,unlearn_acc,unlearn_score,mia_auc,runtime_s\n";
  for (const auto& r : rows) {
    out << format_double(r.ratio) << ',' << r.method << ',' << format_double(r.test_acc) << ','
        << format_double(r.unlearn_acc) << ',' << format_double(r.unlearn_score) << ','
        << (r.mia_auc ? format_double(*r.mia_auc) : std::string("nan")) << ','
        << format_double(r.runtime_s) << '\n';
  }
  return out.str();
}

std::string train_log_csv(const std::vector<EpochLogRow>& log) {
  std::ostringstream out;
  out << "epoch,train_loss,eval_acc\n";
  for (const auto& row : log)
    out << row.epoch << ',' << format_double(row.train_loss) << ',' << format_double(row.eval_acc)
        << '\n';
  return out.str();
}

namespace {

struct EvaluatedModel {
  double test_acc;
  double unlearn_acc;
  double score() const { return std::abs(test_acc - unlearn_acc); }
};

EvaluatedModel evaluate_model(const GnnModel& model, const Graph& graph,
                              const NodePartition& partition) {
  Propagator prop = make_propagator(model.config().arch, graph);
  ForwardResult fw = forward_all(model, graph, prop);
  return {accuracy_from_logits(fw.logits.value(), graph, partition.test_nodes),
          accuracy_from_logits(fw.logits.value(), graph, partition.unlearn_nodes)};
}

std::string ratio_tag(double ratio) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d", static_cast<int>(ratio * 100 + 0.5));
  return buf;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentOptions& opts) {
  Graph graph = load_dataset(cfg);
  const auto out = cfg.out_dir;
  std::filesystem::create_directories(out);

  std::vector<double> ratios = opts.ratios;
  if (ratios.empty()) ratios.push_back(cfg.unlearn_fraction);

  // One trained model serves every ratio: the train/test split does not
  // depend on the unlearn fraction.
  const auto t0 = std::chrono::steady_clock::now();
  NodePartition base_partition =
      split_nodes(graph, cfg.seed, cfg.test_fraction, ratios.front(), cfg.eval_fraction);
  TrainResult trained = train(graph, base_partition, cfg.gnn, cfg.train);
  const double train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_checkpoint(trained.model, out / "original.ckpt");
  write_text_atomic(out / "train_log.csv", train_log_csv(trained.log));

  ExperimentResult result;
  const bool multi = ratios.size() > 1;
  for (double ratio : ratios) {
    NodePartition partition =
        split_nodes(graph, cfg.seed, cfg.test_fraction, ratio, cfg.eval_fraction);
    const std::string suffix = multi ? "_r" + ratio_tag(ratio) : "";

    // Unlearn from a fresh copy of the trained model.
    GnnModel unlearned = trained.model.clone();
    UnlearnConfig ucfg = cfg.unlearn;
    ucfg.k = cfg.gnn.num_layers;
    if (opts.no_reconstruction) ucfg.reconstruction_enabled = false;
    UnlearnReport report = run_contrastive_unlearning(unlearned, graph, partition, ucfg);
    save_checkpoint(unlearned, out / ("unlearned" + suffix + ".ckpt"));
    write_text_atomic(out / ("unlearn_report" + suffix + ".json"), report.to_json(ucfg));

    const auto t1 = std::chrono::steady_clock::now();
    TrainResult retrained =
        retrain_reference(graph, partition, cfg.gnn, cfg.train, cfg.retain_structure);
    const double retrain_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
    save_checkpoint(retrained.model, out / ("retrained" + suffix + ".ckpt"));

    const EvaluatedModel orig_eval = evaluate_model(trained.model, graph, partition);
    const EvaluatedModel unlearn_eval = evaluate_model(unlearned, graph, partition);
    const EvaluatedModel retrain_eval = evaluate_model(retrained.model, graph, partition);

    std::optional<double> auc_orig, auc_unlearned, auc_retrained;
    if (cfg.attack_enabled) {
      // Balanced candidates: every unlearn node as member, an equal number of
      // sampled test nodes as non-members.
      Rng pick = Rng(cfg.attack.seed).fork(0xca9d);
      std::vector<int> test_pool = partition.test_nodes;
      pick.shuffle(test_pool);
      const std::size_t n_nonmember =
          std::min(partition.unlearn_nodes.size(), test_pool.size());
      std::vector<int> candidates = partition.unlearn_nodes;
      candidates.insert(candidates.end(), test_pool.begin(), test_pool.begin() + n_nonmember);
      std::vector<int> eval_nodes = partition.unlearn_nodes;
      eval_nodes.insert(eval_nodes.end(), test_pool.begin(), test_pool.begin() + n_nonmember);
      std::vector<int> member_labels(partition.unlearn_nodes.size(), 1);
      member_labels.resize(eval_nodes.size(), 0);

      AttackConfig acfg = cfg.attack;
      acfg.jobs = opts.jobs;
      ShadowEnsemble shadows = train_shadows(graph, partition, candidates, cfg.gnn, acfg);
      auto attack_one = [&](const GnnModel& target, const std::string& name) {
        MiaResult mia = mia_auc(lira_scores(graph, shadows, target, eval_nodes, acfg),
                                member_labels);
        write_text_atomic(out / ("roc_" + name + suffix + ".csv"), mia.roc_csv());
        write_text_atomic(out / ("mia_" + name + suffix + ".json"), mia.to_json());
        return mia.auc;
      };
      auc_orig = attack_one(trained.model, "original");
      auc_unlearned = attack_one(unlearned, "unlearned");
      auc_retrained = attack_one(retrained.model, "retrained");
    }

    result.rows.push_back({ratio, "original", orig_eval.test_acc, orig_eval.unlearn_acc,
                           orig_eval.score(), auc_orig, train_seconds});
    result.rows.push_back({ratio, "unlearned", unlearn_eval.test_acc, unlearn_eval.unlearn_acc,
                           unlearn_eval.score(), auc_unlearned, report.wall_seconds});
    result.rows.push_back({ratio, "retrained", retrain_eval.test_acc, retrain_eval.unlearn_acc,
                           retrain_eval.score(), auc_retrained, retrain_seconds});
  }

  write_text_atomic(out / "summary.csv", summary_csv(result.rows));
  return result;
}

}  // namespace gcul
