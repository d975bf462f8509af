#pragma once

// Shared test oracles: finite-difference gradient checks, reference BFS,
// naive double-loop loss implementations. Everything here is independent of
// the library's differentiation/search paths it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>
#include <vector>

#include "gcul/graph.hpp"
#include "gcul/tensor.hpp"
#include "gcul/unlearn.hpp"

namespace testutil {

using gcul::Matrix;
using gcul::Rng;
using gcul::Tensor;

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = lo + (hi - lo) * rng.uniform();
  return m;
}

// Random values bounded away from zero, for ops with a kink at the origin.
inline Matrix random_matrix_nonzero(Eigen::Index rows, Eigen::Index cols, Rng& rng,
                                    double margin = 0.05) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double mag = margin + rng.uniform();
      m(r, c) = rng.bernoulli(0.5) ? mag : -mag;
    }
  return m;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  Eigen::Index entries_checked = 0;
};

// Central-difference check of d(forward)/d(input) for every entry of every
// input, against the gradients produced by one backward pass. `forward` must
// rebuild its graph from the live input tensors on each call.
inline GradCheckResult check_gradients(const std::function<Tensor()>& forward,
                                       std::vector<Tensor> inputs, double step = 1e-4) {
  for (auto& t : inputs) t.zero_grad();
  Tensor loss = forward();
  gcul::backward(loss);
  std::vector<Matrix> analytic;
  analytic.reserve(inputs.size());
  for (const auto& t : inputs) analytic.push_back(t.grad());

  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Matrix& value = inputs[i].mutable_value();
    for (Eigen::Index r = 0; r < value.rows(); ++r) {
      for (Eigen::Index c = 0; c < value.cols(); ++c) {
        const double saved = value(r, c);
        value(r, c) = saved + step;
        const double up = forward().scalar();
        value(r, c) = saved - step;
        const double down = forward().scalar();
        value(r, c) = saved;
        const double fd = (up - down) / (2.0 * step);
        const double an = analytic[i](r, c);
        const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3});
        result.max_rel_error = std::max(result.max_rel_error, rel);
        ++result.entries_checked;
      }
    }
  }
  return result;
}

// ---- graph oracles ----------------------------------------------------------

inline gcul::Graph random_graph(int num_nodes, double edge_prob, int num_classes, int feature_dim,
                                Rng& rng) {
  std::vector<std::pair<int, int>> edges;
  for (int u = 0; u < num_nodes; ++u)
    for (int v = u + 1; v < num_nodes; ++v)
      if (rng.bernoulli(edge_prob)) edges.emplace_back(u, v);
  Matrix features = random_matrix(num_nodes, feature_dim, rng);
  std::vector<int> labels(num_nodes);
  for (int i = 0; i < num_nodes; ++i) labels[i] = static_cast<int>(rng.uniform_index(num_classes));
  return gcul::build_graph(num_nodes, edges, std::move(features), std::move(labels), num_classes);
}

// Plain queue BFS, one node at a time; the reference for hop distances.
inline std::vector<int> reference_bfs_distances(const gcul::Graph& g,
                                                const std::vector<int>& seeds) {
  std::vector<int> dist(g.num_nodes, -1);
  std::queue<int> q;
  for (int s : seeds)
    if (dist[s] == -1) {
      dist[s] = 0;
      q.push(s);
    }
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int v : g.neighbors(u))
      if (dist[v] == -1) {
        dist[v] = dist[u] + 1;
        q.push(v);
      }
  }
  return dist;
}

// ---- naive loss references ---------------------------------------------------

// Direct transcription of the node unlearning loss, double loop, no shortcuts.
inline double unlearn_loss_reference(const Matrix& h_u, const Matrix& h_nb, const Matrix& h_r,
                                     const gcul::ContrastiveSets& sets, double tau) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < h_u.rows(); ++i) {
    const auto& negs = sets.negatives[i];
    const auto& poss = sets.positives[i];
    if (negs.empty() || poss.empty()) continue;
    double node_total = 0.0;
    for (int n : negs) {
      double denom = 0.0;
      for (int p : poss) denom += std::exp(h_u.row(i).dot(h_nb.row(p)) / tau);
      const double numer = std::exp(h_u.row(i).dot(h_r.row(n)) / tau);
      node_total += std::log(numer / denom);
    }
    total += -node_total / static_cast<double>(negs.size());
  }
  return total;
}

inline double reconstruction_loss_reference(const Matrix& h_layer, const Matrix& h_next,
                                            const gcul::ReconstructionAnchors& anchors,
                                            double tau) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < h_layer.rows(); ++i) {
    const auto& s = anchors.anchors[i];
    if (s.empty()) continue;
    double acc = 0.0;
    for (int j : s) acc += h_layer.row(i).dot(h_next.row(j)) / tau;
    total += -acc / static_cast<double>(s.size());
  }
  return total;
}

// Random index subsets for loss tests.
inline std::vector<int> random_subset(int universe, Rng& rng, bool allow_empty = true) {
  std::vector<int> out;
  for (int i = 0; i < universe; ++i)
    if (rng.bernoulli(0.4)) out.push_back(i);
  if (!allow_empty && out.empty() && universe > 0)
    out.push_back(static_cast<int>(rng.uniform_index(universe)));
  return out;
}

inline gcul::ContrastiveSets random_contrastive_sets(int batch, int num_neighbors, int num_remain,
                                                     Rng& rng) {
  gcul::ContrastiveSets sets;
  for (int i = 0; i < num_neighbors; ++i) sets.neighbor_nodes.push_back(i);
  sets.positives.resize(batch);
  sets.negatives.resize(batch);
  for (int i = 0; i < batch; ++i) {
    sets.positives[i] = random_subset(num_neighbors, rng);
    sets.negatives[i] = random_subset(num_remain, rng);
    if (sets.positives[i].empty()) ++sets.num_empty_positive;
    if (sets.negatives[i].empty()) ++sets.num_empty_negative;
  }
  return sets;
}

inline gcul::ReconstructionAnchors random_anchors(int layer, int next_layer, Rng& rng) {
  gcul::ReconstructionAnchors anchors;
  anchors.anchors.resize(layer);
  for (int i = 0; i < layer; ++i) {
    anchors.anchors[i] = random_subset(next_layer, rng);
    if (anchors.anchors[i].empty()) ++anchors.num_empty;
  }
  return anchors;
}

}  // namespace testutil
