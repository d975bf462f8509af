#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gcul/common.hpp"

namespace gcul {

using Matrix = Eigen::MatrixXd;

namespace detail {

struct TensorNode {
  Matrix value;
  Matrix grad;  // zero-sized until first accumulation
  bool requires_grad = false;
  bool consumed = false;  // set once backward has run through this op
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;  // accumulates into parents

  Matrix& ensure_grad() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
};

}  // namespace detail

/// Dense double-precision array participating in a reverse-mode gradient
/// tape. The tape is the DAG of shared nodes built by each forward pass;
/// backward() consumes it. Handles are cheap to copy and share one node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false)
      : node_(std::make_shared<detail::TensorNode>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor parameter(Matrix value) { return Tensor(std::move(value), true); }
  static Tensor constant(Matrix value) { return Tensor(std::move(value), false); }
  static Tensor scalar_constant(double v) { return constant(Matrix::Constant(1, 1, v)); }

  bool defined() const { return node_ != nullptr; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  const Matrix& grad() const {
    if (node_->grad.size() == 0) node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (node_->grad.size() != 0) node_->grad.setZero();
  }

  double scalar() const {
    if (rows() != 1 || cols() != 1) throw ContractError("Tensor::scalar: tensor is not 1x1");
    return node_->value(0, 0);
  }

  /// Same values, no tape: gradients never flow through the result.
  Tensor detach() const { return constant(node_->value); }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  friend Tensor make_op(Matrix, std::vector<Tensor>, std::function<void(detail::TensorNode&)>);
  std::shared_ptr<detail::TensorNode> node_;
};

/// Builds an op node. `backward` receives the finished node (out.grad is
/// populated) and must accumulate into out.parents[i]->ensure_grad() for every
/// parent with requires_grad. Ops whose inputs are all constant skip the tape.
inline Tensor make_op(Matrix value, std::vector<Tensor> inputs,
                      std::function<void(detail::TensorNode&)> backward) {
  bool any_grad = false;
  for (const auto& t : inputs) any_grad = any_grad || t.requires_grad();
  Tensor out(std::move(value), any_grad);
  if (any_grad) {
    out.node_->parents.reserve(inputs.size());
    for (auto& t : inputs) out.node_->parents.push_back(t.node());
    out.node_->backward_fn = std::move(backward);
  }
  return out;
}

/// Sparse CSR matrix holding a fixed (non-differentiable) aggregation
/// operator, e.g. a normalized adjacency.
class SparseMatrix {
 public:
  SparseMatrix() = default;

  static SparseMatrix from_csr(int rows, int cols, const std::vector<int>& offsets,
                               const std::vector<int>& indices, const std::vector<double>& values);

  Eigen::Index rows() const { return mat_.rows(); }
  Eigen::Index cols() const { return mat_.cols(); }
  Eigen::Index nonzeros() const { return mat_.nonZeros(); }
  const Eigen::SparseMatrix<double, Eigen::RowMajor>& eigen() const { return mat_; }

  const int* csr_offsets() const { return mat_.outerIndexPtr(); }
  const int* csr_indices() const { return mat_.innerIndexPtr(); }
  const double* csr_values() const { return mat_.valuePtr(); }

 private:
  Eigen::SparseMatrix<double, Eigen::RowMajor> mat_;
};

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor spmm(const SparseMatrix& a, const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor nll_loss(const Tensor& log_probs, const std::vector<int>& labels);
Tensor l2_normalize_rows(const Tensor& a);
Tensor pairwise_dot(const Tensor& a, const Tensor& b);
Tensor gather_rows(const Tensor& a, const std::vector<int>& row_indices);
Tensor dropout(const Tensor& a, double rate, Rng& rng);

/// Populates gradients of every parameter reachable from `loss`, then frees
/// the tape. A second backward through the same op nodes throws.
void backward(const Tensor& loss);

// ---- Adam ------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(const std::vector<Tensor>& params, AdamConfig cfg);

  int step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

  /// One bias-corrected update from the gradients currently stored on `params`.
  void step(std::vector<Tensor>& params);

 private:
  AdamConfig cfg_;
  std::vector<Matrix> m_, v_;
  int step_ = 0;
};

/// Plain gradient step: p -= lr * p.grad. Used where the unlearning procedure
/// calls for raw gradient descent.
void sgd_step(std::vector<Tensor>& params, double learning_rate);

void adam_step(std::vector<Tensor>& params, AdamState& state);

}  // namespace gcul
