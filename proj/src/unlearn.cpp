#include "gcul/unlearn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "gcul/trainer.hpp"

namespace gcul {

ContrastiveSets build_contrastive_sets(const Graph& graph,
                                       const std::vector<std::uint8_t>& supervised_mask,
                                       const std::vector<int>& batch_unlearn,
                                       const std::vector<int>& batch_remain) {
  ContrastiveSets sets;

  // Row order of the neighbor embedding matrix: union of supervised one-hop
  // neighbors of the batch.
  std::unordered_set<int> neighbor_set;
  for (int u : batch_unlearn)
    for (int v : graph.neighbors(u))
      if (supervised_mask[v]) neighbor_set.insert(v);
  sets.neighbor_nodes.assign(neighbor_set.begin(), neighbor_set.end());
  std::sort(sets.neighbor_nodes.begin(), sets.neighbor_nodes.end());
  std::unordered_map<int, int> neighbor_row;
  for (std::size_t i = 0; i < sets.neighbor_nodes.size(); ++i)
    neighbor_row.emplace(sets.neighbor_nodes[i], static_cast<int>(i));

  sets.positives.resize(batch_unlearn.size());
  sets.negatives.resize(batch_unlearn.size());
  for (std::size_t i = 0; i < batch_unlearn.size(); ++i) {
    const int u = batch_unlearn[i];
    const int label = graph.labels[u];
    for (int v : graph.neighbors(u))
      if (supervised_mask[v] && graph.labels[v] == label)
        sets.positives[i].push_back(neighbor_row.at(v));
    for (std::size_t j = 0; j < batch_remain.size(); ++j)
      if (graph.labels[batch_remain[j]] != label)
        sets.negatives[i].push_back(static_cast<int>(j));
    if (sets.positives[i].empty()) ++sets.num_empty_positive;
    if (sets.negatives[i].empty()) ++sets.num_empty_negative;
  }
  return sets;
}

ReconstructionAnchors build_reconstruction_anchors(const Graph& graph,
                                                   const std::vector<int>& layer_nodes,
                                                   const std::vector<int>& next_layer_nodes) {
  std::unordered_map<int, int> next_row;
  for (std::size_t i = 0; i < next_layer_nodes.size(); ++i)
    next_row.emplace(next_layer_nodes[i], static_cast<int>(i));
  ReconstructionAnchors out;
  out.anchors.resize(layer_nodes.size());
  for (std::size_t i = 0; i < layer_nodes.size(); ++i) {
    for (int v : graph.neighbors(layer_nodes[i])) {
      auto it = next_row.find(v);
      if (it != next_row.end()) out.anchors[i].push_back(it->second);
    }
    if (out.anchors[i].empty()) ++out.num_empty;
  }
  return out;
}

Tensor unlearn_loss(const Tensor& h_unlearn, const Tensor& h_neighbors, const Tensor& h_remain,
                    const ContrastiveSets& sets, double tau) {
  if (tau <= 0) throw ContractError("unlearn_loss: tau must be positive");
  const auto batch = static_cast<std::size_t>(h_unlearn.rows());
  if (sets.positives.size() != batch || sets.negatives.size() != batch)
    throw ContractError("unlearn_loss: sets do not match batch size");

  Tensor dots_neg = pairwise_dot(h_unlearn, h_remain);      // batch x |remain|
  Tensor dots_pos = pairwise_dot(h_unlearn, h_neighbors);   // batch x |neighbors|

  const double inv_tau = 1.0 / tau;
  const auto& dn = dots_neg.value();
  const auto& dp = dots_pos.value();

  double total = 0.0;
  // Per-row softmax over the positive subset, reused by the backward pass.
  std::vector<std::vector<double>> pos_softmax(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const auto& neg = sets.negatives[i];
    const auto& pos = sets.positives[i];
    if (neg.empty() || pos.empty()) continue;  // flagged: contributes zero

    double mx = -std::numeric_limits<double>::infinity();
    for (int p : pos) mx = std::max(mx, dp(i, p) * inv_tau);
    double denom = 0.0;
    pos_softmax[i].resize(pos.size());
    for (std::size_t t = 0; t < pos.size(); ++t) {
      pos_softmax[i][t] = std::exp(dp(i, pos[t]) * inv_tau - mx);
      denom += pos_softmax[i][t];
    }
    const double lse = std::log(denom) + mx;
    for (std::size_t t = 0; t < pos.size(); ++t) pos_softmax[i][t] /= denom;

    double neg_mean = 0.0;
    for (int n : neg) neg_mean += dn(i, n) * inv_tau;
    neg_mean /= static_cast<double>(neg.size());
    total += -(neg_mean - lse);
  }
  if (!std::isfinite(total)) throw NumericError("unlearn_loss: non-finite loss");

  auto sets_copy = sets;
  return make_op(
      Matrix::Constant(1, 1, total), {dots_neg, dots_pos},
      [sets_copy = std::move(sets_copy), pos_softmax = std::move(pos_softmax),
       inv_tau](detail::TensorNode& node) {
        const double g = node.grad(0, 0);
        auto& pn = *node.parents[0];
        auto& pp = *node.parents[1];
        Matrix* gn = pn.requires_grad ? &pn.ensure_grad() : nullptr;
        Matrix* gp = pp.requires_grad ? &pp.ensure_grad() : nullptr;
        for (std::size_t i = 0; i < sets_copy.positives.size(); ++i) {
          const auto& neg = sets_copy.negatives[i];
          const auto& pos = sets_copy.positives[i];
          if (neg.empty() || pos.empty()) continue;
          if (gn) {
            const double coeff = -g * inv_tau / static_cast<double>(neg.size());
            for (int n : neg) (*gn)(i, n) += coeff;
          }
          if (gp) {
            for (std::size_t t = 0; t < pos.size(); ++t)
              (*gp)(i, pos[t]) += g * inv_tau * pos_softmax[i][t];
          }
        }
      });
}

Tensor reconstruction_loss(const Tensor& h_layer, const Tensor& h_next_layer,
                           const ReconstructionAnchors& anchors, double tau) {
  if (tau <= 0) throw ContractError("reconstruction_loss: tau must be positive");
  if (anchors.anchors.size() != static_cast<std::size_t>(h_layer.rows()))
    throw ContractError("reconstruction_loss: anchors do not match layer size");

  Tensor dots = pairwise_dot(h_layer, h_next_layer);
  const double inv_tau = 1.0 / tau;
  double total = 0.0;
  for (std::size_t i = 0; i < anchors.anchors.size(); ++i) {
    const auto& s = anchors.anchors[i];
    if (s.empty()) continue;
    double acc = 0.0;
    for (int j : s) acc += dots.value()(i, j);
    total += -acc * inv_tau / static_cast<double>(s.size());
  }
  if (!std::isfinite(total)) throw NumericError("reconstruction_loss: non-finite loss");

  auto anchor_copy = anchors.anchors;
  return make_op(Matrix::Constant(1, 1, total), {dots},
                 [anchor_copy = std::move(anchor_copy), inv_tau](detail::TensorNode& node) {
                   auto& p = *node.parents[0];
                   if (!p.requires_grad) return;
                   Matrix& gd = p.ensure_grad();
                   const double g = node.grad(0, 0);
                   for (std::size_t i = 0; i < anchor_copy.size(); ++i) {
                     const auto& s = anchor_copy[i];
                     if (s.empty()) continue;
                     const double coeff = -g * inv_tau / static_cast<double>(s.size());
                     for (int j : s) gd(i, j) += coeff;
                   }
                 });
}

namespace {

Tensor maybe_normalize(const Tensor& h, const UnlearnConfig& cfg) {
  return cfg.normalize_embeddings ? l2_normalize_rows(h) : h;
}

double contrastive_tau(const UnlearnConfig& cfg) {
  // In the exp(dot)/tau variant the temperature cancels between numerator and
  // denominator, leaving plain dots.
  return cfg.tau_outside_exp ? 1.0 : cfg.tau;
}

std::vector<int> labels_of(const Graph& graph, const std::vector<int>& nodes) {
  std::vector<int> out(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) out[i] = graph.labels[nodes[i]];
  return out;
}

}  // namespace

AdamState make_unlearn_optimizer(const GnnModel& model, const UnlearnConfig& cfg) {
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = cfg.learning_rate;
  // No momentum: successive steps optimize different batch objectives, and
  // first-moment carryover smears one batch's push into the next update. The
  // weight decay matches the trainer's so updates stay near the trained
  // optimum's regularized basin.
  adam_cfg.beta1 = 0.0;
  adam_cfg.weight_decay = cfg.weight_decay;
  return AdamState(model.parameters(), adam_cfg);
}

namespace {

// Linear warmup keeps the first adaptive steps from kicking every weight by
// the full rate before the moment estimates settle.
void warmed_step(GnnModel& model, AdamState& optimizer, const UnlearnConfig& cfg) {
  const int t = optimizer.step_count() + 1;
  const double ramp = cfg.warmup_steps > 0 ? std::min(1.0, static_cast<double>(t) / cfg.warmup_steps) : 1.0;
  optimizer.set_learning_rate(cfg.learning_rate * ramp);
  optimizer.step(model.parameters());
}

}  // namespace

void node_representation_unlearn_step(GnnModel& model, AdamState& optimizer, const Graph& graph,
                                      const std::vector<int>& batch_unlearn,
                                      const Subgraph& sub_unlearn,
                                      const std::vector<int>& batch_remain,
                                      const Subgraph& sub_remain,
                                      const std::vector<std::uint8_t>& supervised_mask,
                                      const UnlearnConfig& cfg) {
  cfg.validate();
  ContrastiveSets sets = build_contrastive_sets(graph, supervised_mask, batch_unlearn, batch_remain);

  model.zero_grads();

  ForwardResult remain_fw =
      embed_and_predict(model, sub_remain, sub_remain.to_local(batch_remain));
  Tensor h_unlearn;
  Tensor h_neighbors;
  {
    Propagator prop = make_propagator(model.config().arch, sub_unlearn);
    ForwardResult all = forward_all(model, sub_unlearn.graph, prop);
    h_unlearn = gather_rows(all.embeddings, sub_unlearn.to_local(batch_unlearn));
    h_neighbors = gather_rows(all.embeddings, sub_unlearn.to_local(sets.neighbor_nodes));
  }

  // Neighbor and remain embeddings are contrastive reference points: this
  // loss moves the unlearning nodes' embeddings only. The references are held
  // in place by the cross-entropy term and by neighborhood reconstruction.
  Tensor contrastive = unlearn_loss(
      maybe_normalize(h_unlearn, cfg), maybe_normalize(h_neighbors, cfg).detach(),
      maybe_normalize(remain_fw.embeddings, cfg).detach(), sets, contrastive_tau(cfg));
  Tensor ce = nll_loss(log_softmax_rows(remain_fw.logits), labels_of(graph, batch_remain));
  // The contrastive term sums over the batch while the cross-entropy is a
  // mean; averaging it over the batch keeps beta on the intended scale.
  Tensor total = add(scale(contrastive, cfg.push_scale / static_cast<double>(batch_unlearn.size())),
                     scale(ce, cfg.beta));
  backward(total);
  warmed_step(model, optimizer, cfg);
}

namespace {

struct LayerEval {
  Tensor embeddings;  // all layer nodes, raw
  Tensor logits;
  const std::vector<int>* nodes = nullptr;  // global ids, layer order
};

// Recursive unwind from the deepest nonempty layer. `idx` addresses
// `kept`, a list of nonempty layer indices into `layers`.
LayerEval reconstruct_recursive(GnnModel& model, AdamState& optimizer, const Graph& graph,
                                const LayeredNeighborhood& layers,
                                const std::vector<int>& kept, std::size_t idx,
                                const std::vector<std::uint8_t>& supervised_mask,
                                const UnlearnConfig& cfg,
                                const std::function<void(int, int)>& on_update) {
  const int layer = kept[idx];
  const Subgraph& sub = layers.layer_subgraphs[layer];
  const auto& locals = layers.layer_locals[layer];

  if (idx + 1 == kept.size()) {  // deepest: anchor only, no update here
    LayerEval out;
    ForwardResult fw = embed_and_predict(model, sub, locals);
    out.embeddings = fw.embeddings;
    out.logits = fw.logits;
    out.nodes = &layers.layers[layer];
    return out;
  }

  LayerEval deeper = reconstruct_recursive(model, optimizer, graph, layers, kept, idx + 1,
                                           supervised_mask, cfg, on_update);

  model.zero_grads();
  ForwardResult fw = embed_and_predict(model, sub, locals);
  ReconstructionAnchors anchors =
      build_reconstruction_anchors(graph, layers.layers[layer], *deeper.nodes);

  // Deeper embeddings act as fixed anchors; their cross-entropy term is what
  // keeps them in place.
  Tensor align = reconstruction_loss(maybe_normalize(fw.embeddings, cfg),
                                     maybe_normalize(deeper.embeddings.detach(), cfg), anchors,
                                     contrastive_tau(cfg));
  std::vector<int> supervised_rows;
  std::vector<int> supervised_labels;
  for (std::size_t i = 0; i < deeper.nodes->size(); ++i) {
    const int v = (*deeper.nodes)[i];
    if (supervised_mask[v]) {
      supervised_rows.push_back(static_cast<int>(i));
      supervised_labels.push_back(graph.labels[v]);
    }
  }
  Tensor total = scale(align, 1.0 / static_cast<double>(layers.layers[layer].size()));
  if (!supervised_rows.empty()) {
    Tensor ce = nll_loss(log_softmax_rows(gather_rows(deeper.logits, supervised_rows)),
                         supervised_labels);
    total = add(total, scale(ce, cfg.gamma));
  }
  backward(total);
  warmed_step(model, optimizer, cfg);
  if (on_update) on_update(layer, kept[idx + 1]);

  // Recompute with the updated parameters before handing upward.
  LayerEval out;
  ForwardResult fresh = embed_and_predict(model, sub, locals);
  out.embeddings = fresh.embeddings;
  out.logits = fresh.logits;
  out.nodes = &layers.layers[layer];
  return out;
}

}  // namespace

void neighborhood_reconstruction(GnnModel& model, AdamState& optimizer, const Graph& graph,
                                 const LayeredNeighborhood& layers,
                                 const std::vector<std::uint8_t>& supervised_mask,
                                 const UnlearnConfig& cfg,
                                 const std::function<void(int, int)>& on_update) {
  cfg.validate();
  std::vector<int> kept;
  for (std::size_t l = 0; l < layers.layers.size(); ++l)
    if (!layers.layers[l].empty()) kept.push_back(static_cast<int>(l));
  if (kept.empty()) return;
  reconstruct_recursive(model, optimizer, graph, layers, kept, 0, supervised_mask, cfg,
                        on_update);
}

bool termination_check(const GnnModel& model, const Graph& graph,
                       const std::vector<int>& unlearn_nodes,
                       const std::vector<int>& eval_nodes) {
  if (unlearn_nodes.empty() || eval_nodes.empty())
    throw ContractError("termination_check: node sets must be nonempty");
  Propagator prop = make_propagator(model.config().arch, graph);
  ForwardResult fw = forward_all(model, graph, prop);
  return accuracy_from_logits(fw.logits.value(), graph, unlearn_nodes) <=
         accuracy_from_logits(fw.logits.value(), graph, eval_nodes);
}

std::string UnlearnReport::to_json(const UnlearnConfig& cfg) const {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  std::ostringstream out;
  out << "{\n";
  out << "  \"rounds\": " << rounds << ",\n";
  out << "  \"termination\": \""
      << (termination == Termination::kConditionMet
              ? "condition_met"
              : termination == Termination::kMaxRounds ? "max_rounds" : "empty_unlearn_set")
      << "\",\n";
  out << "  \"initial_unlearn_acc\": " << fmt(initial_unlearn_acc) << ",\n";
  out << "  \"initial_eval_acc\": " << fmt(initial_eval_acc) << ",\n";
  out << "  \"unlearn_acc_per_round\": [";
  for (std::size_t i = 0; i < unlearn_acc_per_round.size(); ++i)
    out << (i ? ", " : "") << fmt(unlearn_acc_per_round[i]);
  out << "],\n";
  out << "  \"eval_acc_per_round\": [";
  for (std::size_t i = 0; i < eval_acc_per_round.size(); ++i)
    out << (i ? ", " : "") << fmt(eval_acc_per_round[i]);
  out << "],\n";
  out << "  \"wall_seconds\": " << fmt(wall_seconds) << ",\n";
  out << "  \"config\": {\n";
  out << "    \"tau\": " << fmt(cfg.tau) << ",\n";
  out << "    \"beta\": " << fmt(cfg.beta) << ",\n";
  out << "    \"gamma\": " << fmt(cfg.gamma) << ",\n";
  out << "    \"repeat\": " << cfg.repeat << ",\n";
  out << "    \"batch_size_unlearn\": " << cfg.batch_size_unlearn << ",\n";
  out << "    \"batch_size_remain\": " << cfg.batch_size_remain << ",\n";
  out << "    \"k\": " << cfg.k << ",\n";
  out << "    \"max_rounds\": " << cfg.max_rounds << ",\n";
  out << "    \"learning_rate\": " << fmt(cfg.learning_rate) << ",\n";
  out << "    \"seed\": " << cfg.seed << ",\n";
  out << "    \"normalize_embeddings\": " << (cfg.normalize_embeddings ? "true" : "false") << ",\n";
  out << "    \"tau_outside_exp\": " << (cfg.tau_outside_exp ? "true" : "false") << ",\n";
  out << "    \"reconstruction_enabled\": " << (cfg.reconstruction_enabled ? "true" : "false")
      << "\n";
  out << "  }\n";
  out << "}\n";
  return out.str();
}

UnlearnReport run_contrastive_unlearning(GnnModel& model, const Graph& graph,
                                         const NodePartition& partition,
                                         const UnlearnConfig& cfg) {
  cfg.validate();
  partition.validate(graph.num_nodes);
  if (cfg.k != model.config().num_layers)
    throw ContractError("run_contrastive_unlearning: k must equal the model layer count");

  UnlearnReport report;
  const auto t_start = std::chrono::steady_clock::now();
  if (partition.unlearn_nodes.empty()) {
    report.termination = Termination::kEmptyUnlearnSet;
    return report;
  }

  std::vector<std::uint8_t> supervised_mask(graph.num_nodes, 0);
  for (int v : partition.train_nodes) supervised_mask[v] = 1;

  Propagator full_prop = make_propagator(model.config().arch, graph);
  auto eval_accuracies = [&]() {
    ForwardResult fw = forward_all(model, graph, full_prop);
    return std::pair<double, double>{
        accuracy_from_logits(fw.logits.value(), graph, partition.unlearn_nodes),
        accuracy_from_logits(fw.logits.value(), graph, partition.eval_nodes)};
  };

  auto [acc_u, acc_eval] = eval_accuracies();
  report.initial_unlearn_acc = acc_u;
  report.initial_eval_acc = acc_eval;
  if (acc_u <= acc_eval) {  // already indistinguishable from unseen nodes
    report.termination = Termination::kConditionMet;
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
  }

  Rng rng(cfg.seed);
  Rng batch_rng = rng.fork(0xba7c4);
  Rng remain_rng = rng.fork(0x2e3a1);

  std::vector<int> remain_pool = partition.remain_nodes;
  std::size_t remain_cursor = remain_pool.size();  // force initial shuffle
  auto sample_remain_batch = [&]() {
    const std::size_t want =
        std::min<std::size_t>(cfg.batch_size_remain, partition.remain_nodes.size());
    if (remain_cursor + want > remain_pool.size()) {
      remain_rng.shuffle(remain_pool);
      remain_cursor = 0;
    }
    std::vector<int> batch(remain_pool.begin() + remain_cursor,
                           remain_pool.begin() + remain_cursor + want);
    remain_cursor += want;
    return batch;
  };

  AdamState optimizer = make_unlearn_optimizer(model, cfg);
  const int reconstruction_passes = (cfg.repeat + 1) / 2;  // ceil(omega / 2)
  for (int round = 1; round <= cfg.max_rounds; ++round) {
    std::vector<int> unlearn_order = partition.unlearn_nodes;
    batch_rng.shuffle(unlearn_order);

    for (std::size_t start = 0; start < unlearn_order.size();
         start += cfg.batch_size_unlearn) {
      const std::size_t end =
          std::min(unlearn_order.size(), start + cfg.batch_size_unlearn);
      std::vector<int> batch(unlearn_order.begin() + start, unlearn_order.begin() + end);

      Subgraph sub_unlearn = induced_subgraph(graph, khop_ball(graph, batch, cfg.k + 1));
      LayeredNeighborhood neighborhood =
          k_hop_layers(graph, batch, cfg.k, partition.unlearn_nodes);

      for (int t = 0; t < cfg.repeat; ++t) {
        std::vector<int> batch_remain = sample_remain_batch();
        Subgraph sub_remain = induced_subgraph(graph, khop_ball(graph, batch_remain, cfg.k));
        node_representation_unlearn_step(model, optimizer, graph, batch, sub_unlearn,
                                         batch_remain, sub_remain, supervised_mask, cfg);
      }
      if (cfg.reconstruction_enabled) {
        for (int t = 0; t < reconstruction_passes; ++t)
          neighborhood_reconstruction(model, optimizer, graph, neighborhood, supervised_mask,
                                      cfg);
      }
    }

    std::tie(acc_u, acc_eval) = eval_accuracies();
    report.unlearn_acc_per_round.push_back(acc_u);
    report.eval_acc_per_round.push_back(acc_eval);
    report.rounds = round;
    if (acc_u <= acc_eval) {
      report.termination = Termination::kConditionMet;
      break;
    }
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

}  // namespace gcul
