#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gcul/graph.hpp"
#include "gcul/tensor.hpp"

namespace gcul {

enum class GnnArch { kGcn, kGin };

std::string to_string(GnnArch arch);
GnnArch parse_arch(const std::string& s);

struct GnnConfig {
  GnnArch arch = GnnArch::kGcn;
  int num_layers = 2;  // also the neighbor depth k used by unlearning
  int hidden_dim = 64;
  int embedding_dim = 64;
  double dropout = 0.5;
  double gin_eps = 0.0;
};

/// Embedding stack plus linear prediction head. Parameters are double
/// precision, Glorot-initialized from the seed; every layer is bias-free.
class GnnModel {
 public:
  GnnModel() = default;
  GnnModel(GnnConfig cfg, int input_dim, int num_classes, std::uint64_t init_seed);

  const GnnConfig& config() const { return cfg_; }
  int input_dim() const { return input_dim_; }
  int num_classes() const { return num_classes_; }
  std::uint64_t init_seed() const { return init_seed_; }

  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  const Tensor& head() const { return params_.back(); }

  /// Deep copy: fresh parameter tensors with identical values.
  GnnModel clone() const;
  void zero_grads();

 private:
  GnnConfig cfg_;
  int input_dim_ = 0;
  int num_classes_ = 0;
  std::uint64_t init_seed_ = 0;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
};

/// Kipf-normalized adjacency: with self loops added, D^{-1/2} (A + I) D^{-1/2}.
/// The degree override evaluates a subgraph with its parent graph's degrees,
/// which keeps message passing on k-hop subgraphs exact.
struct NormalizedAdjacency {
  SparseMatrix mat;
  static NormalizedAdjacency build(const Graph& graph);
  static NormalizedAdjacency build(const Graph& graph, const std::vector<int>& degrees);
};

/// Unnormalized adjacency without self entries (sum aggregation).
SparseMatrix plain_adjacency(const Graph& graph);

Tensor gcn_layer(const Tensor& h, const NormalizedAdjacency& adj, const Tensor& weight,
                 bool apply_relu);
Tensor gin_layer(const Tensor& h, const SparseMatrix& adj, const Tensor& mlp_w1,
                 const Tensor& mlp_w2, double eps);

/// Precomputed aggregation operator for one graph/arch pair.
struct Propagator {
  std::optional<NormalizedAdjacency> normalized;  // GCN
  std::optional<SparseMatrix> plain;              // GIN
};
Propagator make_propagator(GnnArch arch, const Graph& graph);
Propagator make_propagator(GnnArch arch, const Subgraph& sub);  // parent degrees

struct ForwardOptions {
  Rng* dropout_rng = nullptr;  // enables dropout when set (training only)
};

/// Embeddings (pre-head) and logits for every node of `graph`, on one tape.
struct ForwardResult {
  Tensor embeddings;
  Tensor logits;
};
ForwardResult forward_all(const GnnModel& model, const Graph& graph, const Propagator& prop,
                          const ForwardOptions& opts = {});

/// Final-layer embeddings for the requested nodes (local subgraph ids), in
/// request order. The subgraph must contain the nodes' k-hop context.
Tensor embed(const GnnModel& model, const Subgraph& sub, const std::vector<int>& node_locals);

/// Logits for the requested nodes, head applied to the embeddings.
Tensor predict(const GnnModel& model, const Subgraph& sub, const std::vector<int>& node_locals);

/// Both, sharing a single forward pass.
ForwardResult embed_and_predict(const GnnModel& model, const Subgraph& sub,
                                const std::vector<int>& node_locals);

// ---- checkpoints (format documented in docs/checkpoint_format.md) -----------

void save_checkpoint(const GnnModel& model, const std::filesystem::path& path);
GnnModel load_checkpoint(const std::filesystem::path& path);

}  // namespace gcul
