#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gcul/tensor.hpp"

namespace gcul {

/// Immutable CSR node/edge store with dense features and class labels.
/// Adjacency is symmetric, self-loop free and duplicate free; targets are
/// sorted ascending within each row.
struct Graph {
  int num_nodes = 0;
  std::vector<int> csr_offsets;  // length num_nodes + 1
  std::vector<int> csr_targets;
  Matrix features;  // num_nodes x feature_dim
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<std::string> class_names;  // index order

  int feature_dim() const { return static_cast<int>(features.cols()); }
  int num_edge_entries() const { return static_cast<int>(csr_targets.size()); }
  int degree(int u) const { return csr_offsets[u + 1] - csr_offsets[u]; }
  std::span<const int> neighbors(int u) const {
    return {csr_targets.data() + csr_offsets[u],
            static_cast<std::size_t>(csr_offsets[u + 1] - csr_offsets[u])};
  }
  bool has_edge(int u, int v) const;

  void validate() const;
};

/// Builds a Graph from an undirected edge list (u,v pairs; either or both
/// orientations may be present). Symmetrizes, deduplicates and drops self
/// loops.
Graph build_graph(int num_nodes, const std::vector<std::pair<int, int>>& edges, Matrix features,
                  std::vector<int> labels, int num_classes,
                  std::vector<std::string> class_names = {});

struct LoadStats {
  int dropped_edge_lines = 0;     // cites lines referencing unknown ids
  int removed_self_loops = 0;     // self-citations dropped
  int removed_duplicate_edges = 0;
};

/// Parses the raw citation-graph format: content lines are
/// `<node_id> <f_0> ... <f_{d-1}> <label>`, cites lines are `<cited> <citing>`.
/// Node ids map to [0, n) in content order; labels map to dense class indices
/// in first-appearance order; edges are symmetrized.
Graph load_planetoid(std::istream& content, std::istream& cites, LoadStats* stats = nullptr);

/// The five disjoint node roles. All vectors are sorted ascending.
struct NodePartition {
  std::vector<int> train_nodes;
  std::vector<int> test_nodes;
  std::vector<int> unlearn_nodes;
  std::vector<int> remain_nodes;
  std::vector<int> eval_nodes;  // subset of test_nodes

  void validate(int num_nodes) const;
};

/// Deterministic per seed. The test/train split depends only on the seed and
/// test_fraction, so the same trained model is reusable across different
/// unlearn fractions. Sizes are floor(fraction * base size).
NodePartition split_nodes(const Graph& graph, std::uint64_t seed, double test_fraction,
                          double unlearn_fraction, double eval_fraction);

/// Induced-subgraph view with local<->global index maps. parent_degrees keeps
/// the full-graph degree of every included node so degree-dependent operators
/// (GCN normalization) evaluate exactly as they would on the full graph.
struct Subgraph {
  Graph graph;                        // node-induced subgraph, local ids
  std::vector<int> local_to_global;   // sorted
  std::unordered_map<int, int> global_to_local;
  std::vector<int> parent_degrees;

  int to_local(int global_id) const;
  std::vector<int> to_local(std::span<const int> global_ids) const;
};

Subgraph induced_subgraph(const Graph& graph, const std::vector<int>& nodes);

/// All nodes within `depth` hops of the seed set, seeds included. Sorted.
std::vector<int> khop_ball(const Graph& graph, const std::vector<int>& seeds, int depth);

/// Hop-distance layers around a seed set. layers[i] holds the nodes at
/// shortest-path distance exactly i+1 from the seeds (distances measured in
/// the full graph), minus the excluded set. layer_subgraphs[i] is the induced
/// subgraph on the layer's nodes plus their k-hop context, enough for an exact
/// forward pass; layer_locals[i] are the layer nodes' local indices there.
struct LayeredNeighborhood {
  std::vector<std::vector<int>> layers;
  std::vector<Subgraph> layer_subgraphs;
  std::vector<std::vector<int>> layer_locals;
};

/// Builds k+1 layers (distances 1..k+1). Subgraph context depth equals k, the
/// model depth. Seeds never appear in their own layers.
LayeredNeighborhood k_hop_layers(const Graph& graph, const std::vector<int>& seeds, int k,
                                 const std::vector<int>& exclude);

/// Returns a copy whose feature rows each sum to 1 (zero rows untouched).
Graph row_normalize_features(Graph graph);

// ---- canonical dataset directory (binary graph + manifest) ------------------

std::uint64_t edge_checksum(const Graph& graph);
std::string manifest_text(const Graph& graph);

void save_graph(const Graph& graph, const std::filesystem::path& dir);
Graph load_graph_dir(const std::filesystem::path& dir);

}  // namespace gcul
