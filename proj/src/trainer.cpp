#include "gcul/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace gcul {

namespace {

int argmax_row(const Matrix& m, Eigen::Index row) {
  int best = 0;
  for (Eigen::Index c = 1; c < m.cols(); ++c)
    if (m(row, c) > m(row, best)) best = static_cast<int>(c);
  return best;
}

}  // namespace

double accuracy_from_logits(const Matrix& logits, const Graph& graph,
                            const std::vector<int>& nodes) {
  if (nodes.empty()) throw ContractError("accuracy: empty node set");
  int correct = 0;
  for (int v : nodes)
    if (argmax_row(logits, v) == graph.labels[v]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

double accuracy(const GnnModel& model, const Graph& graph, const std::vector<int>& nodes) {
  Propagator prop = make_propagator(model.config().arch, graph);
  ForwardResult fw = forward_all(model, graph, prop);
  return accuracy_from_logits(fw.logits.value(), graph, nodes);
}

TrainResult train_supervised(const Graph& graph, const std::vector<int>& supervised_nodes,
                             const std::vector<int>& eval_nodes, const GnnConfig& gnn_cfg,
                             const TrainConfig& cfg) {
  cfg.validate();
  if (supervised_nodes.empty()) throw ContractError("train: no supervised nodes");

  GnnModel model(gnn_cfg, graph.feature_dim(), graph.num_classes, cfg.seed);
  Propagator prop = make_propagator(gnn_cfg.arch, graph);
  Rng dropout_rng = Rng(cfg.seed).fork(0xd70);

  std::vector<int> supervised_labels(supervised_nodes.size());
  for (std::size_t i = 0; i < supervised_nodes.size(); ++i)
    supervised_labels[i] = graph.labels[supervised_nodes[i]];

  AdamConfig adam_cfg;
  adam_cfg.learning_rate = cfg.learning_rate;
  adam_cfg.weight_decay = cfg.weight_decay;
  AdamState adam(model.parameters(), adam_cfg);

  TrainResult result;
  const bool early_stop = !eval_nodes.empty();
  GnnModel best = model.clone();
  double best_acc = -1.0;
  int best_epoch = -1;
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    model.zero_grads();
    ForwardOptions opts;
    opts.dropout_rng = &dropout_rng;
    ForwardResult fw = forward_all(model, graph, prop, opts);
    Tensor loss =
        nll_loss(log_softmax_rows(gather_rows(fw.logits, supervised_nodes)), supervised_labels);
    const double loss_value = loss.scalar();
    if (!std::isfinite(loss_value)) throw NumericError("train: loss diverged");
    backward(loss);
    adam.step(model.parameters());

    double eval_acc = 0.0;
    if (early_stop) {
      ForwardResult eval_fw = forward_all(model, graph, prop);  // dropout off
      eval_acc = accuracy_from_logits(eval_fw.logits.value(), graph, eval_nodes);
    }
    result.log.push_back({epoch, loss_value, eval_acc});

    if (!early_stop) continue;
    // Ties keep the later snapshot: eval accuracy is quantized on a small
    // eval set, and later plateau models are the more converged ones.
    if (eval_acc >= best_acc) {
      const bool improved = eval_acc > best_acc;
      best_acc = eval_acc;
      best_epoch = epoch;
      best = model.clone();
      if (improved)
        since_best = 0;
      else if (++since_best >= cfg.patience)
        break;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  result.model = (early_stop && cfg.max_epochs > 0) ? std::move(best) : std::move(model);
  result.best_epoch = best_epoch;
  result.best_eval_acc = std::max(best_acc, 0.0);
  return result;
}

TrainResult train(const Graph& graph, const NodePartition& partition, const GnnConfig& gnn_cfg,
                  const TrainConfig& cfg) {
  partition.validate(graph.num_nodes);
  return train_supervised(graph, partition.train_nodes, partition.eval_nodes, gnn_cfg, cfg);
}

TrainResult retrain_reference(const Graph& graph, const NodePartition& partition,
                              const GnnConfig& gnn_cfg, const TrainConfig& cfg,
                              bool retain_structure) {
  partition.validate(graph.num_nodes);
  if (retain_structure || partition.unlearn_nodes.empty()) {
    return train_supervised(graph, partition.remain_nodes, partition.eval_nodes, gnn_cfg, cfg);
  }
  // Exact deletion: the unlearn nodes are absent from the training graph.
  std::vector<int> kept;
  kept.reserve(graph.num_nodes - partition.unlearn_nodes.size());
  std::size_t skip = 0;
  for (int v = 0; v < graph.num_nodes; ++v) {
    if (skip < partition.unlearn_nodes.size() && partition.unlearn_nodes[skip] == v) {
      ++skip;
      continue;
    }
    kept.push_back(v);
  }
  Subgraph sub = induced_subgraph(graph, kept);
  return train_supervised(sub.graph, sub.to_local(partition.remain_nodes),
                          sub.to_local(partition.eval_nodes), gnn_cfg, cfg);
}

}  // namespace gcul
