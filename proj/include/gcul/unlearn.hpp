#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gcul/gnn.hpp"
#include "gcul/graph.hpp"

namespace gcul {

struct UnlearnConfig {
  double tau = 0.5;        // contrastive temperature
  double beta = 8.0;       // cross-entropy weight in the node-unlearning total
  double gamma = 1.0;      // cross-entropy weight in the reconstruction total
  double push_scale = 2.5; // weight of the batch-mean node-unlearning term
  int repeat = 2;        // node-unlearning steps per batch (omega)
  int batch_size_unlearn = 128;
  int batch_size_remain = 128;
  int k = 2;             // neighbor depth; must equal the model's layer count
  int max_rounds = 50;
  double learning_rate = 5e-3;
  double weight_decay = 5e-4;
  int warmup_steps = 30;  // linear learning-rate ramp at the start of a run
  std::uint64_t seed = 3;
  bool normalize_embeddings = true;  // raw-dot variant when false
  bool tau_outside_exp = false;      // exp(dot)/tau form; tau then cancels in the ratio
  bool reconstruction_enabled = true;

  void validate() const {
    if (tau <= 0) throw ConfigError("UnlearnConfig: tau must be positive");
    if (repeat < 1) throw ConfigError("UnlearnConfig: repeat must be >= 1");
    if (max_rounds < 1) throw ConfigError("UnlearnConfig: max_rounds must be >= 1");
    if (batch_size_unlearn < 1 || batch_size_remain < 1)
      throw ConfigError("UnlearnConfig: batch sizes must be >= 1");
    if (learning_rate <= 0) throw ConfigError("UnlearnConfig: learning_rate must be > 0");
    if (k < 1) throw ConfigError("UnlearnConfig: k must be >= 1");
  }
};

/// Per unlearning node: positives are same-class one-hop neighbors (rows into
/// neighbor_nodes), negatives are different-class remaining-batch nodes (rows
/// into the remain batch). Only nodes with supervised labels ever qualify as
/// positives, so test labels never reach a loss.
struct ContrastiveSets {
  std::vector<int> neighbor_nodes;          // one-hop neighbors of the batch (global ids)
  std::vector<std::vector<int>> positives;  // per batch node -> rows into neighbor_nodes
  std::vector<std::vector<int>> negatives;  // per batch node -> rows into the remain batch
  int num_empty_positive = 0;               // flagged nodes (contribute zero)
  int num_empty_negative = 0;
};

ContrastiveSets build_contrastive_sets(const Graph& graph,
                                       const std::vector<std::uint8_t>& supervised_mask,
                                       const std::vector<int>& batch_unlearn,
                                       const std::vector<int>& batch_remain);

/// Per layer-node: anchor rows into the next-deeper layer's node order. Anchors
/// are graph neighbors, never unlearning nodes.
struct ReconstructionAnchors {
  std::vector<std::vector<int>> anchors;
  int num_empty = 0;
};

ReconstructionAnchors build_reconstruction_anchors(const Graph& graph,
                                                   const std::vector<int>& layer_nodes,
                                                   const std::vector<int>& next_layer_nodes);

/// Node unlearning loss: pulls each unlearning embedding toward its
/// different-class remaining negatives and pushes it from its same-class
/// neighbor positives,
///   sum_i (-1/|N_i|) sum_{n in N_i} log( exp(h_i.h_n / tau)
///                                        / sum_{p in P_i} exp(h_i.h_p / tau) ).
/// Nodes with an empty positive or negative set contribute exactly zero.
Tensor unlearn_loss(const Tensor& h_unlearn, const Tensor& h_neighbors, const Tensor& h_remain,
                    const ContrastiveSets& sets, double tau);

/// Neighborhood reconstruction loss: pulls each layer embedding toward its
/// anchors in the next layer,
///   sum_i (-1/|S_i|) sum_{j in S_i} (h_i.h_j) / tau.
/// Empty anchor sets contribute zero.
Tensor reconstruction_loss(const Tensor& h_layer, const Tensor& h_next_layer,
                           const ReconstructionAnchors& anchors, double tau);

/// Fresh optimizer for an unlearning run. The node-unlearning loss sums over
/// the batch, so raw gradient magnitudes scale with batch size; the adaptive
/// update keeps the configured learning rate meaningful across batch sizes.
AdamState make_unlearn_optimizer(const GnnModel& model, const UnlearnConfig& cfg);

/// One gradient step on unlearn_loss + beta * cross_entropy(remain batch).
/// sub_unlearn must cover the batch's (k+1)-hop ball, sub_remain the remain
/// batch's k-hop ball.
void node_representation_unlearn_step(GnnModel& model, AdamState& optimizer, const Graph& graph,
                                      const std::vector<int>& batch_unlearn,
                                      const Subgraph& sub_unlearn,
                                      const std::vector<int>& batch_remain,
                                      const Subgraph& sub_remain,
                                      const std::vector<std::uint8_t>& supervised_mask,
                                      const UnlearnConfig& cfg);

/// Recursive deepest-first reconstruction over the layered neighborhood. The
/// deepest nonempty layer is evaluated as an anchor only (its cross-entropy
/// term stabilizes it); unwinding shallower, each layer takes one gradient
/// step against the next layer's freshly recomputed embeddings.
/// `on_update(shallower, deeper)` fires once per gradient step, in order.
void neighborhood_reconstruction(GnnModel& model, AdamState& optimizer, const Graph& graph,
                                 const LayeredNeighborhood& layers,
                                 const std::vector<std::uint8_t>& supervised_mask,
                                 const UnlearnConfig& cfg,
                                 const std::function<void(int, int)>& on_update = nullptr);

/// True once accuracy on the unlearning nodes has dropped to at most the
/// accuracy on the held-out evaluation nodes.
bool termination_check(const GnnModel& model, const Graph& graph,
                       const std::vector<int>& unlearn_nodes,
                       const std::vector<int>& eval_nodes);

enum class Termination { kConditionMet, kMaxRounds, kEmptyUnlearnSet };

struct UnlearnReport {
  int rounds = 0;
  Termination termination = Termination::kMaxRounds;
  double initial_unlearn_acc = 0.0;
  double initial_eval_acc = 0.0;
  std::vector<double> unlearn_acc_per_round;
  std::vector<double> eval_acc_per_round;
  double wall_seconds = 0.0;

  bool condition_met() const { return termination == Termination::kConditionMet; }
  std::string to_json(const UnlearnConfig& cfg) const;
};

/// The full unlearning procedure: rounds of per-batch node representation
/// unlearning followed by neighborhood reconstruction, until the termination
/// condition holds on the evaluation nodes or max_rounds is exhausted.
UnlearnReport run_contrastive_unlearning(GnnModel& model, const Graph& graph,
                                         const NodePartition& partition,
                                         const UnlearnConfig& cfg);

}  // namespace gcul
