#pragma once

#include <cstdint>
#include <vector>

#include "gcul/gnn.hpp"
#include "gcul/graph.hpp"

namespace gcul {

struct TrainConfig {
  int max_epochs = 500;
  double learning_rate = 5e-3;
  double weight_decay = 5e-4;
  int patience = 50;  // early stopping on eval-set accuracy
  std::uint64_t seed = 1;

  void validate() const {
    if (max_epochs < 0) throw ConfigError("TrainConfig: max_epochs must be >= 0");
    if (learning_rate <= 0) throw ConfigError("TrainConfig: learning_rate must be > 0");
    if (patience < 1) throw ConfigError("TrainConfig: patience must be >= 1");
  }
};

struct EpochLogRow {
  int epoch;
  double train_loss;
  double eval_acc;
};

struct TrainResult {
  GnnModel model;  // parameters from the best eval-accuracy epoch
  std::vector<EpochLogRow> log;
  int best_epoch = -1;
  double best_eval_acc = 0.0;
};

/// Transductive full-batch training: the forward pass sees the whole graph,
/// cross-entropy is taken over the supervised nodes only.
TrainResult train_supervised(const Graph& graph, const std::vector<int>& supervised_nodes,
                             const std::vector<int>& eval_nodes, const GnnConfig& gnn_cfg,
                             const TrainConfig& cfg);

/// Supervision on partition.train_nodes.
TrainResult train(const Graph& graph, const NodePartition& partition, const GnnConfig& gnn_cfg,
                  const TrainConfig& cfg);

/// Gold-standard baseline. By default the unlearn nodes are removed from the
/// graph entirely before training; with retain_structure they stay in the
/// graph and only lose supervision. Either way the returned model is meant to
/// be evaluated on the original full graph.
TrainResult retrain_reference(const Graph& graph, const NodePartition& partition,
                              const GnnConfig& gnn_cfg, const TrainConfig& cfg,
                              bool retain_structure = false);

/// Fraction of argmax-correct predictions over `nodes`; argmax ties resolve
/// to the lowest class index.
double accuracy(const GnnModel& model, const Graph& graph, const std::vector<int>& nodes);
double accuracy_from_logits(const Matrix& logits, const Graph& graph,
                            const std::vector<int>& nodes);

}  // namespace gcul
