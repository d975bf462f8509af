#include "gcul/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <sstream>
#include <unordered_set>

namespace gcul {

bool Graph::has_edge(int u, int v) const {
  auto nb = neighbors(u);
  return std::binary_search(nb.begin(), nb.end(), v);
}

void Graph::validate() const {
  if (static_cast<int>(csr_offsets.size()) != num_nodes + 1)
    throw DataError("Graph: offsets length mismatch");
  if (csr_offsets.front() != 0 || csr_offsets.back() != num_edge_entries())
    throw DataError("Graph: offsets not a prefix sum of targets");
  if (features.rows() != num_nodes) throw DataError("Graph: feature row count mismatch");
  if (static_cast<int>(labels.size()) != num_nodes) throw DataError("Graph: label count mismatch");
  for (int u = 0; u < num_nodes; ++u) {
    if (csr_offsets[u] > csr_offsets[u + 1]) throw DataError("Graph: offsets not monotone");
    auto nb = neighbors(u);
    for (std::size_t i = 0; i < nb.size(); ++i) {
      const int v = nb[i];
      if (v < 0 || v >= num_nodes) throw DataError("Graph: neighbor index out of range");
      if (v == u) throw DataError("Graph: self loop stored");
      if (i > 0 && nb[i] <= nb[i - 1]) throw DataError("Graph: row not sorted/deduplicated");
      if (!has_edge(v, u)) throw DataError("Graph: adjacency not symmetric");
    }
  }
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw DataError("Graph: label out of class range");
}

Graph build_graph(int num_nodes, const std::vector<std::pair<int, int>>& edges, Matrix features,
                  std::vector<int> labels, int num_classes, std::vector<std::string> class_names) {
  std::vector<std::vector<int>> adj(num_nodes);
  for (auto [u, v] : edges) {
    if (u < 0 || u >= num_nodes || v < 0 || v >= num_nodes)
      throw DataError("build_graph: edge endpoint out of range");
    if (u == v) continue;
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  Graph g;
  g.num_nodes = num_nodes;
  g.csr_offsets.assign(num_nodes + 1, 0);
  for (int u = 0; u < num_nodes; ++u) {
    auto& row = adj[u];
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    g.csr_offsets[u + 1] = g.csr_offsets[u] + static_cast<int>(row.size());
  }
  g.csr_targets.reserve(g.csr_offsets.back());
  for (auto& row : adj) g.csr_targets.insert(g.csr_targets.end(), row.begin(), row.end());
  g.features = std::move(features);
  g.labels = std::move(labels);
  g.num_classes = num_classes;
  if (class_names.empty()) {
    for (int c = 0; c < num_classes; ++c) class_names.push_back("class_" + std::to_string(c));
  }
  g.class_names = std::move(class_names);
  return g;
}

Graph load_planetoid(std::istream& content, std::istream& cites, LoadStats* stats) {
  std::unordered_map<std::string, int> id_to_index;
  std::unordered_map<std::string, int> label_to_class;
  std::vector<std::string> class_names;
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;

  std::string line;
  int line_no = 0;
  int feature_dim = -1;
  while (std::getline(content, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id;
    ss >> id;
    if (id.empty())
      throw DataError("content line " + std::to_string(line_no) + ": missing node id");
    std::vector<std::string> fields;
    std::string tok;
    while (ss >> tok) fields.push_back(tok);
    if (fields.empty())
      throw DataError("content line " + std::to_string(line_no) + ": missing label");
    const std::string label_str = fields.back();
    fields.pop_back();
    if (feature_dim < 0) {
      feature_dim = static_cast<int>(fields.size());
    } else if (static_cast<int>(fields.size()) != feature_dim) {
      throw DataError("content line " + std::to_string(line_no) + ": expected " +
                      std::to_string(feature_dim) + " features, got " +
                      std::to_string(fields.size()));
    }
    std::vector<double> feat(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      std::size_t pos = 0;
      try {
        feat[i] = std::stod(fields[i], &pos);
      } catch (const std::exception&) {
        pos = std::string::npos;
      }
      if (pos != fields[i].size())
        throw DataError("content line " + std::to_string(line_no) + ": bad feature value '" +
                        fields[i] + "'");
    }
    if (!id_to_index.emplace(id, static_cast<int>(rows.size())).second)
      throw DataError("content line " + std::to_string(line_no) + ": duplicate node id '" + id +
                      "'");
    auto [it, fresh] = label_to_class.emplace(label_str, static_cast<int>(class_names.size()));
    if (fresh) class_names.push_back(label_str);
    labels.push_back(it->second);
    rows.push_back(std::move(feat));
  }
  if (rows.empty()) throw DataError("content: no nodes found");

  const int n = static_cast<int>(rows.size());
  Matrix features(n, feature_dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < feature_dim; ++j) features(i, j) = rows[i][j];

  LoadStats local_stats;
  std::vector<std::pair<int, int>> edges;
  line_no = 0;
  while (std::getline(cites, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string a, b, extra;
    if (!(ss >> a >> b) || (ss >> extra))
      throw DataError("cites line " + std::to_string(line_no) + ": expected two node ids");
    auto ia = id_to_index.find(a);
    auto ib = id_to_index.find(b);
    if (ia == id_to_index.end() || ib == id_to_index.end()) {
      ++local_stats.dropped_edge_lines;
      continue;
    }
    if (ia->second == ib->second) {
      ++local_stats.removed_self_loops;
      continue;
    }
    edges.emplace_back(ia->second, ib->second);
  }

  const int num_classes = static_cast<int>(class_names.size());
  Graph g = build_graph(n, edges, std::move(features), std::move(labels), num_classes,
                        std::move(class_names));
  // Duplicates counted against the symmetrized edge set.
  local_stats.removed_duplicate_edges =
      static_cast<int>(edges.size()) - g.num_edge_entries() / 2;
  if (stats) *stats = local_stats;
  return g;
}

void NodePartition::validate(int num_nodes) const {
  auto is_sorted_unique = [](const std::vector<int>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
      if (v[i] <= v[i - 1]) return false;
    return true;
  };
  for (const auto* set : {&train_nodes, &test_nodes, &unlearn_nodes, &remain_nodes, &eval_nodes}) {
    if (!is_sorted_unique(*set)) throw ContractError("NodePartition: sets must be sorted unique");
    for (int v : *set)
      if (v < 0 || v >= num_nodes) throw ContractError("NodePartition: node out of range");
  }
  std::vector<int> merged;
  std::merge(train_nodes.begin(), train_nodes.end(), test_nodes.begin(), test_nodes.end(),
             std::back_inserter(merged));
  if (static_cast<int>(merged.size()) != num_nodes || !is_sorted_unique(merged))
    throw ContractError("NodePartition: train/test must partition all nodes");
  merged.clear();
  std::merge(unlearn_nodes.begin(), unlearn_nodes.end(), remain_nodes.begin(), remain_nodes.end(),
             std::back_inserter(merged));
  if (merged != train_nodes)
    throw ContractError("NodePartition: unlearn/remain must partition train");
  if (!std::includes(test_nodes.begin(), test_nodes.end(), eval_nodes.begin(), eval_nodes.end()))
    throw ContractError("NodePartition: eval must be a subset of test");
}

NodePartition split_nodes(const Graph& graph, std::uint64_t seed, double test_fraction,
                          double unlearn_fraction, double eval_fraction) {
  for (double f : {test_fraction, unlearn_fraction, eval_fraction})
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("split_nodes: fractions must be in (0, 1)");
  if (graph.num_nodes < 10) throw ConfigError("split_nodes: graph has fewer than 10 nodes");

  Rng rng(seed);
  std::vector<int> order(graph.num_nodes);
  for (int i = 0; i < graph.num_nodes; ++i) order[i] = i;
  rng.shuffle(order);

  const int n_test = static_cast<int>(std::floor(test_fraction * graph.num_nodes));
  NodePartition p;
  p.test_nodes.assign(order.begin(), order.begin() + n_test);
  p.train_nodes.assign(order.begin() + n_test, order.end());

  // The unlearn/remain subdivision draws from a forked stream so the
  // train/test split is independent of the unlearn fraction.
  Rng sub = rng.fork(0x756e6c); Rng ev = rng.fork(0x65766c);
  std::vector<int> train_order = p.train_nodes;
  sub.shuffle(train_order);
  const int n_unlearn = static_cast<int>(std::floor(unlearn_fraction * train_order.size()));
  p.unlearn_nodes.assign(train_order.begin(), train_order.begin() + n_unlearn);
  p.remain_nodes.assign(train_order.begin() + n_unlearn, train_order.end());

  std::vector<int> test_order = p.test_nodes;
  ev.shuffle(test_order);
  const int n_eval = static_cast<int>(std::floor(eval_fraction * test_order.size()));
  p.eval_nodes.assign(test_order.begin(), test_order.begin() + n_eval);

  for (auto* set : {&p.train_nodes, &p.test_nodes, &p.unlearn_nodes, &p.remain_nodes,
                    &p.eval_nodes})
    std::sort(set->begin(), set->end());
  p.validate(graph.num_nodes);
  return p;
}

int Subgraph::to_local(int global_id) const {
  auto it = global_to_local.find(global_id);
  if (it == global_to_local.end())
    throw ContractError("Subgraph: node " + std::to_string(global_id) + " not in subgraph");
  return it->second;
}

std::vector<int> Subgraph::to_local(std::span<const int> global_ids) const {
  std::vector<int> out;
  out.reserve(global_ids.size());
  for (int g : global_ids) out.push_back(to_local(g));
  return out;
}

Subgraph induced_subgraph(const Graph& graph, const std::vector<int>& nodes) {
  std::vector<int> sorted = nodes;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  Subgraph sub;
  sub.local_to_global = std::move(sorted);
  sub.global_to_local.reserve(sub.local_to_global.size());
  for (std::size_t i = 0; i < sub.local_to_global.size(); ++i) {
    const int g = sub.local_to_global[i];
    if (g < 0 || g >= graph.num_nodes) throw ContractError("induced_subgraph: node out of range");
    sub.global_to_local.emplace(g, static_cast<int>(i));
  }

  const int n = static_cast<int>(sub.local_to_global.size());
  Graph& sg = sub.graph;
  sg.num_nodes = n;
  sg.csr_offsets.assign(n + 1, 0);
  for (int lu = 0; lu < n; ++lu) {
    int count = 0;
    for (int v : graph.neighbors(sub.local_to_global[lu]))
      if (sub.global_to_local.count(v)) ++count;
    sg.csr_offsets[lu + 1] = sg.csr_offsets[lu] + count;
  }
  sg.csr_targets.reserve(sg.csr_offsets.back());
  for (int lu = 0; lu < n; ++lu) {
    for (int v : graph.neighbors(sub.local_to_global[lu])) {
      auto it = sub.global_to_local.find(v);
      if (it != sub.global_to_local.end()) sg.csr_targets.push_back(it->second);
    }
    // global neighbor order is ascending and local_to_global is monotone,
    // so local targets arrive sorted
  }
  sg.features.resize(n, graph.feature_dim());
  sg.labels.resize(n);
  sub.parent_degrees.resize(n);
  for (int lu = 0; lu < n; ++lu) {
    sg.features.row(lu) = graph.features.row(sub.local_to_global[lu]);
    sg.labels[lu] = graph.labels[sub.local_to_global[lu]];
    sub.parent_degrees[lu] = graph.degree(sub.local_to_global[lu]);
  }
  sg.num_classes = graph.num_classes;
  sg.class_names = graph.class_names;
  return sub;
}

namespace {

// Hop distances from the seed set, -1 where unreachable.
std::vector<int> bfs_distances(const Graph& graph, const std::vector<int>& seeds) {
  std::vector<int> dist(graph.num_nodes, -1);
  std::vector<int> frontier;
  for (int s : seeds) {
    if (s < 0 || s >= graph.num_nodes) throw ContractError("bfs: seed out of range");
    if (dist[s] == -1) {
      dist[s] = 0;
      frontier.push_back(s);
    }
  }
  int d = 0;
  while (!frontier.empty()) {
    std::vector<int> next;
    ++d;
    for (int u : frontier) {
      for (int v : graph.neighbors(u)) {
        if (dist[v] == -1) {
          dist[v] = d;
          next.push_back(v);
        }
      }
    }
    frontier = std::move(next);
  }
  return dist;
}

}  // namespace

std::vector<int> khop_ball(const Graph& graph, const std::vector<int>& seeds, int depth) {
  auto dist = bfs_distances(graph, seeds);
  std::vector<int> out;
  for (int v = 0; v < graph.num_nodes; ++v)
    if (dist[v] >= 0 && dist[v] <= depth) out.push_back(v);
  return out;
}

LayeredNeighborhood k_hop_layers(const Graph& graph, const std::vector<int>& seeds, int k,
                                 const std::vector<int>& exclude) {
  if (seeds.empty()) throw ContractError("k_hop_layers: seeds must be nonempty");
  if (k < 1) throw ContractError("k_hop_layers: k must be >= 1");
  auto dist = bfs_distances(graph, seeds);
  std::unordered_set<int> excluded(exclude.begin(), exclude.end());

  LayeredNeighborhood out;
  out.layers.assign(k + 1, {});
  for (int v = 0; v < graph.num_nodes; ++v) {
    const int d = dist[v];
    if (d >= 1 && d <= k + 1 && !excluded.count(v)) out.layers[d - 1].push_back(v);
  }
  out.layer_subgraphs.reserve(out.layers.size());
  out.layer_locals.reserve(out.layers.size());
  for (const auto& layer : out.layers) {
    Subgraph sub = layer.empty() ? Subgraph{} : induced_subgraph(graph, khop_ball(graph, layer, k));
    out.layer_locals.push_back(layer.empty() ? std::vector<int>{} : sub.to_local(layer));
    out.layer_subgraphs.push_back(std::move(sub));
  }
  return out;
}

Graph row_normalize_features(Graph graph) {
  for (int i = 0; i < graph.num_nodes; ++i) {
    const double s = graph.features.row(i).sum();
    if (s != 0.0) graph.features.row(i) /= s;
  }
  return graph;
}

std::uint64_t edge_checksum(const Graph& graph) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int u = 0; u < graph.num_nodes; ++u) {
    for (int v : graph.neighbors(u)) {
      const std::uint64_t pair = (static_cast<std::uint64_t>(u) << 32) | static_cast<std::uint32_t>(v);
      h = fnv1a64(&pair, sizeof(pair), h);
    }
  }
  return h;
}

std::string manifest_text(const Graph& graph) {
  std::ostringstream out;
  out << "num_nodes=" << graph.num_nodes << "\n";
  out << "feature_dim=" << graph.feature_dim() << "\n";
  out << "num_classes=" << graph.num_classes << "\n";
  out << "num_edge_entries=" << graph.num_edge_entries() << "\n";
  for (std::size_t c = 0; c < graph.class_names.size(); ++c)
    out << "class_" << c << "=" << graph.class_names[c] << "\n";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(edge_checksum(graph)));
  out << "edge_checksum=" << buf << "\n";
  return out.str();
}

namespace {

constexpr char kGraphMagic[8] = {'G', 'C', 'U', 'L', 'G', 'R', '1', '\n'};

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("graph binary: truncated file");
  return v;
}

}  // namespace

void save_graph(const Graph& graph, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto tmp = dir / "graph.bin.tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("save_graph: cannot open " + tmp.string());
    out.write(kGraphMagic, sizeof(kGraphMagic));
    write_pod(out, static_cast<std::int64_t>(graph.num_nodes));
    write_pod(out, static_cast<std::int64_t>(graph.feature_dim()));
    write_pod(out, static_cast<std::int64_t>(graph.num_classes));
    write_pod(out, static_cast<std::int64_t>(graph.num_edge_entries()));
    out.write(reinterpret_cast<const char*>(graph.csr_offsets.data()),
              static_cast<std::streamsize>(graph.csr_offsets.size() * sizeof(int)));
    out.write(reinterpret_cast<const char*>(graph.csr_targets.data()),
              static_cast<std::streamsize>(graph.csr_targets.size() * sizeof(int)));
    out.write(reinterpret_cast<const char*>(graph.features.data()),
              static_cast<std::streamsize>(graph.features.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(graph.labels.data()),
              static_cast<std::streamsize>(graph.labels.size() * sizeof(int)));
    for (const auto& name : graph.class_names) out << name << '\n';
    if (!out) throw DataError("save_graph: write failed");
  }
  std::filesystem::rename(tmp, dir / "graph.bin");

  const auto mtmp = dir / "manifest.txt.tmp";
  {
    std::ofstream out(mtmp, std::ios::trunc);
    out << manifest_text(graph);
    if (!out) throw DataError("save_graph: manifest write failed");
  }
  std::filesystem::rename(mtmp, dir / "manifest.txt");
}

Graph load_graph_dir(const std::filesystem::path& dir) {
  std::ifstream in(dir / "graph.bin", std::ios::binary);
  if (!in) throw DataError("load_graph_dir: cannot open " + (dir / "graph.bin").string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kGraphMagic))
    throw DataError("load_graph_dir: bad magic");
  Graph g;
  g.num_nodes = static_cast<int>(read_pod<std::int64_t>(in));
  const int fdim = static_cast<int>(read_pod<std::int64_t>(in));
  g.num_classes = static_cast<int>(read_pod<std::int64_t>(in));
  const int entries = static_cast<int>(read_pod<std::int64_t>(in));
  g.csr_offsets.resize(g.num_nodes + 1);
  g.csr_targets.resize(entries);
  in.read(reinterpret_cast<char*>(g.csr_offsets.data()),
          static_cast<std::streamsize>(g.csr_offsets.size() * sizeof(int)));
  in.read(reinterpret_cast<char*>(g.csr_targets.data()),
          static_cast<std::streamsize>(g.csr_targets.size() * sizeof(int)));
  g.features.resize(g.num_nodes, fdim);
  in.read(reinterpret_cast<char*>(g.features.data()),
          static_cast<std::streamsize>(g.features.size() * sizeof(double)));
  g.labels.resize(g.num_nodes);
  in.read(reinterpret_cast<char*>(g.labels.data()),
          static_cast<std::streamsize>(g.labels.size() * sizeof(int)));
  if (!in) throw DataError("load_graph_dir: truncated file");
  std::string name;
  while (std::getline(in, name))
    if (!name.empty()) g.class_names.push_back(name);
  if (static_cast<int>(g.class_names.size()) != g.num_classes)
    throw DataError("load_graph_dir: class name count mismatch");
  g.validate();
  return g;
}

}  // namespace gcul
