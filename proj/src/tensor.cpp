#include "gcul/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace gcul {

namespace {

void check_finite(const Matrix& m, const char* op) {
  if (!m.allFinite()) throw NumericError(std::string(op) + ": non-finite input");
}

}  // namespace

SparseMatrix SparseMatrix::from_csr(int rows, int cols, const std::vector<int>& offsets,
                                    const std::vector<int>& indices,
                                    const std::vector<double>& values) {
  if (static_cast<int>(offsets.size()) != rows + 1)
    throw ContractError("SparseMatrix: offsets length must be rows + 1");
  if (indices.size() != values.size())
    throw ContractError("SparseMatrix: indices/values length mismatch");
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError("SparseMatrix: non-finite value");

  SparseMatrix out;
  out.mat_.resize(rows, cols);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(values.size());
  for (int r = 0; r < rows; ++r) {
    for (int i = offsets[r]; i < offsets[r + 1]; ++i) {
      triplets.emplace_back(r, indices[i], values[i]);
    }
  }
  out.mat_.setFromTriplets(triplets.begin(), triplets.end());
  out.mat_.makeCompressed();
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ContractError("matmul: inner dimensions do not match");
  Matrix out = a.value() * b.value();
  return make_op(std::move(out), {a, b}, [](detail::TensorNode& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) pa.ensure_grad().noalias() += n.grad * pb.value.transpose();
    if (pb.requires_grad) pb.ensure_grad().noalias() += pa.value.transpose() * n.grad;
  });
}

Tensor spmm(const SparseMatrix& a, const Tensor& x) {
  if (a.cols() != x.rows()) throw ContractError("spmm: inner dimensions do not match");
  Matrix out = a.eigen() * x.value();
  // The sparse operator is a fixed aggregation; only the dense side gets a gradient.
  Eigen::SparseMatrix<double, Eigen::RowMajor> at = a.eigen().transpose();
  return make_op(std::move(out), {x}, [at = std::move(at)](detail::TensorNode& n) {
    auto& px = *n.parents[0];
    if (px.requires_grad) px.ensure_grad().noalias() += at * n.grad;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError("add: shape mismatch");
  check_finite(a.value(), "add");
  check_finite(b.value(), "add");
  Matrix out = a.value() + b.value();
  return make_op(std::move(out), {a, b}, [](detail::TensorNode& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) p->ensure_grad() += n.grad;
  });
}

Tensor scale(const Tensor& a, double c) {
  check_finite(a.value(), "scale");
  if (!std::isfinite(c)) throw NumericError("scale: non-finite factor");
  Matrix out = a.value() * c;
  return make_op(std::move(out), {a}, [c](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (p.requires_grad) p.ensure_grad() += c * n.grad;
  });
}

Tensor exp(const Tensor& a) {
  check_finite(a.value(), "exp");
  Matrix out = a.value().array().exp();
  return make_op(std::move(out), {a}, [](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (p.requires_grad) p.ensure_grad().array() += n.grad.array() * n.value.array();
  });
}

Tensor log(const Tensor& a) {
  check_finite(a.value(), "log");
  Matrix out = a.value().array().log();
  return make_op(std::move(out), {a}, [](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (p.requires_grad) p.ensure_grad().array() += n.grad.array() / p.value.array();
  });
}

Tensor relu(const Tensor& a) {
  check_finite(a.value(), "relu");
  Matrix out = a.value().cwiseMax(0.0);
  return make_op(std::move(out), {a}, [](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (p.requires_grad)
      p.ensure_grad().array() += n.grad.array() * (p.value.array() > 0.0).cast<double>();
  });
}

Tensor sum(const Tensor& a) {
  check_finite(a.value(), "sum");
  Matrix out = Matrix::Constant(1, 1, a.value().sum());
  return make_op(std::move(out), {a}, [](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (p.requires_grad) p.ensure_grad().array() += n.grad(0, 0);
  });
}

Tensor mean(const Tensor& a) {
  check_finite(a.value(), "mean");
  const double inv = 1.0 / static_cast<double>(a.rows() * a.cols());
  Matrix out = Matrix::Constant(1, 1, a.value().sum() * inv);
  return make_op(std::move(out), {a}, [inv](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (p.requires_grad) p.ensure_grad().array() += n.grad(0, 0) * inv;
  });
}

Tensor log_softmax_rows(const Tensor& a) {
  check_finite(a.value(), "log_softmax_rows");
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double mx = a.value().row(r).maxCoeff();
    const double lse = std::log((a.value().row(r).array() - mx).exp().sum()) + mx;
    out.row(r) = a.value().row(r).array() - lse;
  }
  return make_op(std::move(out), {a}, [](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    Matrix& g = p.ensure_grad();
    for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
      const double gsum = n.grad.row(r).sum();
      g.row(r).array() += n.grad.row(r).array() - n.value.row(r).array().exp() * gsum;
    }
  });
}

Tensor nll_loss(const Tensor& log_probs, const std::vector<int>& labels) {
  check_finite(log_probs.value(), "nll_loss");
  if (static_cast<Eigen::Index>(labels.size()) != log_probs.rows())
    throw ContractError("nll_loss: one label per row required");
  if (labels.empty()) throw ContractError("nll_loss: empty batch");
  const double inv = 1.0 / static_cast<double>(labels.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= log_probs.cols())
      throw ContractError("nll_loss: label out of range");
    acc -= log_probs.value()(static_cast<Eigen::Index>(i), labels[i]);
  }
  Matrix out = Matrix::Constant(1, 1, acc * inv);
  return make_op(std::move(out), {log_probs}, [labels, inv](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    Matrix& g = p.ensure_grad();
    const double go = n.grad(0, 0);
    for (std::size_t i = 0; i < labels.size(); ++i)
      g(static_cast<Eigen::Index>(i), labels[i]) -= go * inv;
  });
}

Tensor l2_normalize_rows(const Tensor& a) {
  check_finite(a.value(), "l2_normalize_rows");
  Matrix out(a.rows(), a.cols());
  Eigen::VectorXd norms(a.rows());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double s = a.value().row(r).norm();
    norms(r) = s;
    // Zero rows stay zero rather than becoming NaN.
    out.row(r) = s > 0.0 ? (a.value().row(r) / s).eval() : a.value().row(r);
  }
  return make_op(std::move(out), {a}, [norms = std::move(norms)](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    Matrix& g = p.ensure_grad();
    for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
      const double s = norms(r);
      if (s <= 0.0) continue;
      const auto u = n.value.row(r);
      const double ug = u.dot(n.grad.row(r));
      g.row(r).array() += (n.grad.row(r).array() - u.array() * ug) / s;
    }
  });
}

Tensor pairwise_dot(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw ContractError("pairwise_dot: embedding dims do not match");
  check_finite(a.value(), "pairwise_dot");
  check_finite(b.value(), "pairwise_dot");
  Matrix out = a.value() * b.value().transpose();
  return make_op(std::move(out), {a, b}, [](detail::TensorNode& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) pa.ensure_grad().noalias() += n.grad * pb.value;
    if (pb.requires_grad) pb.ensure_grad().noalias() += n.grad.transpose() * pa.value;
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& row_indices) {
  Matrix out(static_cast<Eigen::Index>(row_indices.size()), a.cols());
  for (std::size_t i = 0; i < row_indices.size(); ++i) {
    if (row_indices[i] < 0 || row_indices[i] >= a.rows())
      throw ContractError("gather_rows: row index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(row_indices[i]);
  }
  return make_op(std::move(out), {a}, [row_indices](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    Matrix& g = p.ensure_grad();
    for (std::size_t i = 0; i < row_indices.size(); ++i)
      g.row(row_indices[i]) += n.grad.row(static_cast<Eigen::Index>(i));
  });
}

Tensor dropout(const Tensor& a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      mask(r, c) = rng.bernoulli(rate) ? 0.0 : keep_scale;
  Matrix out = a.value().cwiseProduct(mask);
  return make_op(std::move(out), {a}, [mask = std::move(mask)](detail::TensorNode& n) {
    auto& p = *n.parents[0];
    if (p.requires_grad) p.ensure_grad() += n.grad.cwiseProduct(mask);
  });
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined tensor");
  if (loss.rows() != 1 || loss.cols() != 1)
    throw ContractError("backward: loss must be scalar");
  auto root = loss.node();
  if (root->consumed) throw ContractError("backward: tape already consumed");
  if (!root->requires_grad) return;  // nothing reachable requires a gradient

  // Iterative post-order DFS producing a topological order of op nodes. The
  // order holds owning pointers: clearing a node's parents must not free
  // nodes that have not run yet.
  std::vector<std::shared_ptr<detail::TensorNode>> order;
  std::unordered_set<detail::TensorNode*> visited;
  std::vector<std::pair<std::shared_ptr<detail::TensorNode>, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const std::shared_ptr<detail::TensorNode>& parent = node->parents[next++];
      if (parent->consumed) throw ContractError("backward: tape already consumed");
      if (parent->backward_fn && !visited.count(parent.get())) {
        visited.insert(parent.get());
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()(0, 0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* node = it->get();
    if (node->backward_fn) {
      node->backward_fn(*node);
      node->backward_fn = nullptr;
      node->parents.clear();  // release the tape
      node->consumed = true;
    }
  }
}

AdamState::AdamState(const std::vector<Tensor>& params, AdamConfig cfg) : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void AdamState::step(std::vector<Tensor>& params) {
  if (params.size() != m_.size()) throw ContractError("AdamState: parameter count changed");
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix g = params[i].grad();
    if (g.rows() != m_[i].rows() || g.cols() != m_[i].cols())
      throw ContractError("AdamState: gradient shape mismatch");
    if (cfg_.weight_decay != 0.0) g += cfg_.weight_decay * params[i].value();
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const Matrix mhat = m_[i] / bc1;
    const Matrix vhat = v_[i] / bc2;
    params[i].mutable_value().array() -=
        cfg_.learning_rate * mhat.array() / (vhat.array().sqrt() + cfg_.epsilon);
  }
}

void adam_step(std::vector<Tensor>& params, AdamState& state) { state.step(params); }

void sgd_step(std::vector<Tensor>& params, double learning_rate) {
  for (auto& p : params) p.mutable_value() -= learning_rate * p.grad();
}

}  // namespace gcul
