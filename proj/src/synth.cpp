#include "gcul/synth.hpp"

#include <algorithm>
#include <ostream>
#include <sstream>
#include <unordered_set>
#include <vector>

namespace gcul {

namespace {

struct Generated {
  std::vector<int> classes;                 // per node
  std::vector<std::pair<int, int>> edges;   // undirected, unique
  std::vector<std::vector<int>> active;     // active feature ids per node
};

Generated generate(const SyntheticSpec& spec) {
  if (spec.num_nodes < 2 || spec.num_classes < 2 || spec.feature_dim < spec.num_classes)
    throw ConfigError("SyntheticSpec: degenerate sizes");
  Rng rng(spec.seed);
  Rng class_rng = rng.fork(1);
  Rng edge_rng = rng.fork(2);
  Rng feat_rng = rng.fork(3);

  const int n = spec.num_nodes;
  const int c = spec.num_classes;

  // Uneven class proportions, decreasing like real citation corpora.
  std::vector<double> weight(c);
  double total = 0.0;
  for (int i = 0; i < c; ++i) total += weight[i] = 1.0 / (1.0 + 0.35 * i);
  Generated out;
  out.classes.resize(n);
  std::vector<std::vector<int>> members(c);
  {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    class_rng.shuffle(order);
    double cum = 0.0;
    int next = 0;
    for (int i = 0; i < c; ++i) {
      cum += weight[i] / total;
      const int upto = (i == c - 1) ? n : static_cast<int>(cum * n);
      for (; next < upto; ++next) {
        out.classes[order[next]] = i;
        members[i].push_back(order[next]);
      }
    }
  }

  // Cross-class edges mostly land on an adjacent class: confusion between
  // related topics is systematic in citation graphs, not uniform.
  const auto target_edges = static_cast<std::size_t>(spec.avg_degree * n / 2.0);
  std::unordered_set<std::uint64_t> seen;
  out.edges.reserve(target_edges);
  std::size_t attempts = 0;
  while (out.edges.size() < target_edges && attempts < target_edges * 60) {
    ++attempts;
    const int u = static_cast<int>(edge_rng.uniform_index(n));
    int v;
    if (edge_rng.bernoulli(spec.homophily)) {
      const auto& pool = members[out.classes[u]];
      v = pool[edge_rng.uniform_index(pool.size())];
    } else if (edge_rng.bernoulli(0.7)) {
      const int cls = (out.classes[u] + (edge_rng.bernoulli(0.5) ? 1 : c - 1)) % c;
      const auto& pool = members[cls];
      v = pool[edge_rng.uniform_index(pool.size())];
    } else {
      v = static_cast<int>(edge_rng.uniform_index(n));
      if (out.classes[v] == out.classes[u]) continue;
    }
    if (u == v) continue;
    const std::uint64_t key = (static_cast<std::uint64_t>(std::min(u, v)) << 32) |
                              static_cast<std::uint32_t>(std::max(u, v));
    if (seen.insert(key).second) out.edges.emplace_back(u, v);
  }

  // Feature f has home class f % c. A node draws from its own class pool and
  // the next class's pool (adjacent topics share vocabulary), with uniform
  // noise on top.
  out.active.resize(n);
  auto draw_from_pool = [&](int cls) {
    const int pool = (spec.feature_dim - cls + c - 1) / c;
    return cls + c * static_cast<int>(feat_rng.uniform_index(pool));
  };
  for (int i = 0; i < n; ++i) {
    std::unordered_set<int> feats;
    for (int t = 0; t < spec.features_per_node; ++t) {
      int f;
      if (feat_rng.bernoulli(spec.feature_noise)) {
        f = static_cast<int>(feat_rng.uniform_index(spec.feature_dim));
      } else {
        const int cls =
            feat_rng.bernoulli(0.35) ? (out.classes[i] + 1) % c : out.classes[i];
        f = draw_from_pool(cls);
      }
      feats.insert(f);
    }
    out.active[i].assign(feats.begin(), feats.end());
    std::sort(out.active[i].begin(), out.active[i].end());
  }
  return out;
}

}  // namespace

void write_synthetic_planetoid(const SyntheticSpec& spec, std::ostream& content,
                               std::ostream& cites) {
  Generated g = generate(spec);
  Rng rng = Rng(spec.seed).fork(4);

  // Shuffled print order and non-contiguous ids exercise the loader's mapping.
  std::vector<int> print_order(spec.num_nodes);
  for (int i = 0; i < spec.num_nodes; ++i) print_order[i] = i;
  rng.shuffle(print_order);

  std::vector<int> file_id(spec.num_nodes);
  for (int i = 0; i < spec.num_nodes; ++i) file_id[i] = 100003 + 7 * i;

  std::string line;
  for (int node : print_order) {
    line.clear();
    line += std::to_string(file_id[node]);
    std::size_t next_active = 0;
    for (int f = 0; f < spec.feature_dim; ++f) {
      const bool on =
          next_active < g.active[node].size() && g.active[node][next_active] == f;
      if (on) ++next_active;
      line += on ? " 1" : " 0";
    }
    line += " area_";
    line += std::to_string(g.classes[node]);
    content << line << '\n';
  }

  for (auto [u, v] : g.edges) {
    if (rng.bernoulli(0.5)) std::swap(u, v);
    cites << file_id[u] << '\t' << file_id[v] << '\n';
  }
}

Graph make_synthetic_graph(const SyntheticSpec& spec) {
  std::stringstream content, cites;
  write_synthetic_planetoid(spec, content, cites);
  return load_planetoid(content, cites);
}

}  // namespace gcul
