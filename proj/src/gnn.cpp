#include "gcul/gnn.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gcul {

std::string to_string(GnnArch arch) { return arch == GnnArch::kGcn ? "GCN" : "GIN"; }

GnnArch parse_arch(const std::string& s) {
  if (s == "GCN" || s == "gcn") return GnnArch::kGcn;
  if (s == "GIN" || s == "gin") return GnnArch::kGin;
  throw ConfigError("unknown architecture '" + s + "' (expected gcn or gin)");
}

namespace {

Matrix glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix w(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = (2.0 * rng.uniform() - 1.0) * limit;
  return w;
}

}  // namespace

GnnModel::GnnModel(GnnConfig cfg, int input_dim, int num_classes, std::uint64_t init_seed)
    : cfg_(cfg), input_dim_(input_dim), num_classes_(num_classes), init_seed_(init_seed) {
  if (cfg.num_layers < 1 || cfg.num_layers > 3)
    throw ConfigError("GnnModel: num_layers must be in [1, 3]");
  Rng rng(splitmix64(init_seed ^ 0x6d6f64656cULL));
  auto dim_in = [&](int layer) { return layer == 0 ? input_dim_ : cfg_.hidden_dim; };
  auto dim_out = [&](int layer) {
    return layer == cfg_.num_layers - 1 ? cfg_.embedding_dim : cfg_.hidden_dim;
  };
  for (int l = 0; l < cfg_.num_layers; ++l) {
    if (cfg_.arch == GnnArch::kGcn) {
      params_.push_back(Tensor::parameter(glorot(dim_in(l), dim_out(l), rng)));
      names_.push_back("layer" + std::to_string(l) + ".weight");
    } else {
      params_.push_back(Tensor::parameter(glorot(dim_in(l), cfg_.hidden_dim, rng)));
      names_.push_back("layer" + std::to_string(l) + ".mlp_w1");
      params_.push_back(Tensor::parameter(glorot(cfg_.hidden_dim, dim_out(l), rng)));
      names_.push_back("layer" + std::to_string(l) + ".mlp_w2");
    }
  }
  params_.push_back(Tensor::parameter(glorot(cfg_.embedding_dim, num_classes_, rng)));
  names_.push_back("head.weight");
}

GnnModel GnnModel::clone() const {
  GnnModel out;
  out.cfg_ = cfg_;
  out.input_dim_ = input_dim_;
  out.num_classes_ = num_classes_;
  out.init_seed_ = init_seed_;
  out.names_ = names_;
  out.params_.reserve(params_.size());
  for (const auto& p : params_) out.params_.push_back(Tensor::parameter(p.value()));
  return out;
}

void GnnModel::zero_grads() {
  for (auto& p : params_) p.zero_grad();
}

NormalizedAdjacency NormalizedAdjacency::build(const Graph& graph) {
  std::vector<int> degrees(graph.num_nodes);
  for (int u = 0; u < graph.num_nodes; ++u) degrees[u] = graph.degree(u);
  return build(graph, degrees);
}

NormalizedAdjacency NormalizedAdjacency::build(const Graph& graph,
                                               const std::vector<int>& degrees) {
  const int n = graph.num_nodes;
  if (static_cast<int>(degrees.size()) != n)
    throw ContractError("NormalizedAdjacency: degree vector size mismatch");
  std::vector<int> offsets(n + 1, 0);
  for (int u = 0; u < n; ++u) offsets[u + 1] = offsets[u] + graph.degree(u) + 1;  // + self loop
  std::vector<int> indices(offsets.back());
  std::vector<double> values(offsets.back());
  std::vector<double> inv_sqrt_deg(n);
  for (int u = 0; u < n; ++u) inv_sqrt_deg[u] = 1.0 / std::sqrt(degrees[u] + 1.0);
  for (int u = 0; u < n; ++u) {
    int pos = offsets[u];
    bool self_written = false;
    for (int v : graph.neighbors(u)) {
      if (!self_written && u < v) {
        indices[pos] = u;
        values[pos] = inv_sqrt_deg[u] * inv_sqrt_deg[u];
        self_written = true;
        ++pos;
      }
      indices[pos] = v;
      values[pos] = inv_sqrt_deg[u] * inv_sqrt_deg[v];
      ++pos;
    }
    if (!self_written) {
      indices[pos] = u;
      values[pos] = inv_sqrt_deg[u] * inv_sqrt_deg[u];
      ++pos;
    }
  }
  NormalizedAdjacency out;
  out.mat = SparseMatrix::from_csr(n, n, offsets, indices, values);
  return out;
}

SparseMatrix plain_adjacency(const Graph& graph) {
  std::vector<double> values(graph.csr_targets.size(), 1.0);
  return SparseMatrix::from_csr(graph.num_nodes, graph.num_nodes, graph.csr_offsets,
                                graph.csr_targets, values);
}

Tensor gcn_layer(const Tensor& h, const NormalizedAdjacency& adj, const Tensor& weight,
                 bool apply_relu) {
  // A (H W) and (A H) W agree; multiplying by W first keeps the dense product
  // at the smaller output width.
  Tensor z = spmm(adj.mat, matmul(h, weight));
  return apply_relu ? relu(z) : z;
}

Tensor gin_layer(const Tensor& h, const SparseMatrix& adj, const Tensor& mlp_w1,
                 const Tensor& mlp_w2, double eps) {
  Tensor agg = add(spmm(adj, h), scale(h, 1.0 + eps));
  return matmul(relu(matmul(agg, mlp_w1)), mlp_w2);
}

Propagator make_propagator(GnnArch arch, const Graph& graph) {
  Propagator p;
  if (arch == GnnArch::kGcn)
    p.normalized = NormalizedAdjacency::build(graph);
  else
    p.plain = plain_adjacency(graph);
  return p;
}

Propagator make_propagator(GnnArch arch, const Subgraph& sub) {
  Propagator p;
  if (arch == GnnArch::kGcn)
    p.normalized = NormalizedAdjacency::build(sub.graph, sub.parent_degrees);
  else
    p.plain = plain_adjacency(sub.graph);
  return p;
}

ForwardResult forward_all(const GnnModel& model, const Graph& graph, const Propagator& prop,
                          const ForwardOptions& opts) {
  if (graph.feature_dim() != model.input_dim())
    throw ContractError("forward: feature dim does not match model input dim");
  const GnnConfig& cfg = model.config();
  const auto& params = model.parameters();
  Tensor h = Tensor::constant(graph.features);
  for (int l = 0; l < cfg.num_layers; ++l) {
    const bool last = l == cfg.num_layers - 1;
    if (cfg.arch == GnnArch::kGcn) {
      h = gcn_layer(h, *prop.normalized, params[l], !last);
    } else {
      h = gin_layer(h, *prop.plain, params[2 * l], params[2 * l + 1], cfg.gin_eps);
      if (!last) h = relu(h);
    }
    if (!last && opts.dropout_rng && cfg.dropout > 0.0)
      h = dropout(h, cfg.dropout, *opts.dropout_rng);
  }
  ForwardResult out;
  out.embeddings = h;
  out.logits = matmul(h, model.head());
  return out;
}

ForwardResult embed_and_predict(const GnnModel& model, const Subgraph& sub,
                                const std::vector<int>& node_locals) {
  for (int v : node_locals)
    if (v < 0 || v >= sub.graph.num_nodes)
      throw ContractError("embed: node index outside subgraph");
  Propagator prop = make_propagator(model.config().arch, sub);
  ForwardResult all = forward_all(model, sub.graph, prop);
  ForwardResult out;
  out.embeddings = gather_rows(all.embeddings, node_locals);
  out.logits = gather_rows(all.logits, node_locals);
  return out;
}

Tensor embed(const GnnModel& model, const Subgraph& sub, const std::vector<int>& node_locals) {
  return embed_and_predict(model, sub, node_locals).embeddings;
}

Tensor predict(const GnnModel& model, const Subgraph& sub, const std::vector<int>& node_locals) {
  return embed_and_predict(model, sub, node_locals).logits;
}

// ---- checkpoints -------------------------------------------------------------

void save_checkpoint(const GnnModel& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("save_checkpoint: cannot open " + tmp);
    const GnnConfig& cfg = model.config();
    out << "GCUL-CKPT v1\n";
    out << "arch " << to_string(cfg.arch) << "\n";
    out << "num_layers " << cfg.num_layers << "\n";
    out << "input_dim " << model.input_dim() << "\n";
    out << "hidden_dim " << cfg.hidden_dim << "\n";
    out << "embedding_dim " << cfg.embedding_dim << "\n";
    out << "num_classes " << model.num_classes() << "\n";
    out << "dropout " << cfg.dropout << "\n";
    out << "gin_eps " << cfg.gin_eps << "\n";
    out << "seed " << model.init_seed() << "\n";
    out << "params " << model.parameters().size() << "\n";
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
      const auto& p = model.parameters()[i];
      out << "param " << model.parameter_names()[i] << " " << p.rows() << " " << p.cols() << "\n";
    }
    out << "END\n";
    for (const auto& p : model.parameters()) {
      // row-major on disk
      for (Eigen::Index r = 0; r < p.rows(); ++r)
        for (Eigen::Index c = 0; c < p.cols(); ++c) {
          const double v = p.value()(r, c);
          out.write(reinterpret_cast<const char*>(&v), sizeof(double));
        }
    }
    if (!out) throw DataError("save_checkpoint: write failed");
  }
  std::filesystem::rename(tmp, path);
}

GnnModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_checkpoint: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "GCUL-CKPT v1")
    throw DataError("load_checkpoint: bad header in " + path.string());

  GnnConfig cfg;
  int input_dim = 0, num_classes = 0;
  std::uint64_t seed = 0;
  std::size_t num_params = 0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  std::vector<std::string> names;
  while (std::getline(in, line) && line != "END") {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "arch") {
      std::string v;
      ss >> v;
      cfg.arch = parse_arch(v);
    } else if (key == "num_layers") {
      ss >> cfg.num_layers;
    } else if (key == "input_dim") {
      ss >> input_dim;
    } else if (key == "hidden_dim") {
      ss >> cfg.hidden_dim;
    } else if (key == "embedding_dim") {
      ss >> cfg.embedding_dim;
    } else if (key == "num_classes") {
      ss >> num_classes;
    } else if (key == "dropout") {
      ss >> cfg.dropout;
    } else if (key == "gin_eps") {
      ss >> cfg.gin_eps;
    } else if (key == "seed") {
      ss >> seed;
    } else if (key == "params") {
      ss >> num_params;
    } else if (key == "param") {
      std::string name;
      Eigen::Index r, c;
      ss >> name >> r >> c;
      names.push_back(name);
      shapes.emplace_back(r, c);
    } else {
      throw DataError("load_checkpoint: unknown header key '" + key + "'");
    }
    if (ss.fail()) throw DataError("load_checkpoint: malformed header line '" + line + "'");
  }
  if (line != "END") throw DataError("load_checkpoint: missing END marker");
  if (shapes.size() != num_params) throw DataError("load_checkpoint: param count mismatch");

  GnnModel model(cfg, input_dim, num_classes, seed);
  if (model.parameters().size() != num_params)
    throw DataError("load_checkpoint: architecture/param count mismatch");
  for (std::size_t i = 0; i < num_params; ++i) {
    auto& p = model.parameters()[i];
    if (p.rows() != shapes[i].first || p.cols() != shapes[i].second ||
        model.parameter_names()[i] != names[i])
      throw DataError("load_checkpoint: parameter layout mismatch at " + names[i]);
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index c = 0; c < p.cols(); ++c) {
        double v;
        in.read(reinterpret_cast<char*>(&v), sizeof(double));
        if (!in) throw DataError("load_checkpoint: truncated parameter data");
        p.mutable_value()(r, c) = v;
      }
  }
  return model;
}

}  // namespace gcul
