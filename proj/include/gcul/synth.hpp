#pragma once

#include <cstdint>
#include <iosfwd>

#include "gcul/graph.hpp"

namespace gcul {

/// Parameters of the synthetic citation-graph generator: a stochastic block
/// model with class-correlated sparse binary features, written in the same
/// raw content/cites format the loader ingests. Defaults approximate the
/// statistics of the standard 2708-node citation benchmark.
struct SyntheticSpec {
  int num_nodes = 2708;
  int num_classes = 7;
  int feature_dim = 1433;
  double avg_degree = 3.9;        // mean undirected degree
  double homophily = 0.74;        // fraction of intra-class edges
  int features_per_node = 15;     // active features per node
  double feature_noise = 0.80;    // prob. an active feature ignores the class
  std::uint64_t seed = 7;
};

void write_synthetic_planetoid(const SyntheticSpec& spec, std::ostream& content,
                               std::ostream& cites);

/// Generates and ingests in one step (single code path through the parser).
Graph make_synthetic_graph(const SyntheticSpec& spec);

}  // namespace gcul
