#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gcul/tensor.hpp"
#include "testutil.hpp"

using namespace gcul;
using testutil::check_gradients;
using testutil::random_matrix;
using testutil::random_matrix_nonzero;

TEST_CASE("matmul forward") {
  Matrix x = random_matrix(2, 3, *[] { static Rng r(1); return &r; }());
  Tensor tx = Tensor::constant(x);
  Tensor id = Tensor::constant(Matrix::Identity(2, 2));
  CHECK(matmul(id, tx).value().isApprox(x));

  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  Matrix b(2, 1);
  b << 1, 1;
  Matrix expected(2, 1);
  expected << 3, 7;
  CHECK(matmul(Tensor::constant(a), Tensor::constant(b)).value().isApprox(expected));

  CHECK_THROWS_AS(matmul(Tensor::constant(Matrix::Zero(2, 3)),
                         Tensor::constant(Matrix::Zero(2, 3))),
                  ContractError);
}

TEST_CASE("matmul gradients match finite differences") {
  Rng rng(2);
  Tensor a = Tensor::parameter(random_matrix(5, 4, rng));
  Tensor b = Tensor::parameter(random_matrix(4, 3, rng));
  auto result = check_gradients([&] { return sum(matmul(a, b)); }, {a, b});
  CHECK(result.max_rel_error < 1e-6);
}

TEST_CASE("spmm identity and densify oracle") {
  Rng rng(3);
  SparseMatrix id = SparseMatrix::from_csr(3, 3, {0, 1, 2, 3}, {0, 1, 2}, {1, 1, 1});
  Matrix x = random_matrix(3, 2, rng);
  CHECK(spmm(id, Tensor::constant(x)).value().isApprox(x));

  // random sparse vs densified matmul
  std::vector<int> offsets{0};
  std::vector<int> indices;
  std::vector<double> values;
  const int n = 20;
  Matrix dense = Matrix::Zero(n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if (rng.bernoulli(0.15)) {
        const double v = 2.0 * rng.uniform() - 1.0;
        indices.push_back(c);
        values.push_back(v);
        dense(r, c) = v;
      }
    }
    offsets.push_back(static_cast<int>(indices.size()));
  }
  SparseMatrix sp = SparseMatrix::from_csr(n, n, offsets, indices, values);
  Matrix xd = random_matrix(n, 4, rng);
  CHECK(spmm(sp, Tensor::constant(xd)).value().isApprox(dense * xd, 1e-12));

  Tensor xt = Tensor::parameter(xd);
  auto result = check_gradients([&] { return sum(spmm(sp, xt)); }, {xt});
  CHECK(result.max_rel_error < 1e-6);
}

TEST_CASE("spmm hand-computed normalized path graph") {
  // path 0-1-2 with self loops, symmetric normalization
  // degrees+1: [2, 3, 2]
  const double a01 = 1.0 / std::sqrt(2.0 * 3.0);
  const double a12 = 1.0 / std::sqrt(3.0 * 2.0);
  std::vector<int> offsets{0, 2, 5, 7};
  std::vector<int> indices{0, 1, 0, 1, 2, 1, 2};
  std::vector<double> values{0.5, a01, a01, 1.0 / 3.0, a12, a12, 0.5};
  SparseMatrix norm = SparseMatrix::from_csr(3, 3, offsets, indices, values);
  Matrix onehot = Matrix::Identity(3, 3);
  Matrix out = spmm(norm, Tensor::constant(onehot)).value();
  CHECK(out(0, 0) == doctest::Approx(0.5));
  CHECK(out(0, 1) == doctest::Approx(a01));
  CHECK(out(1, 0) == doctest::Approx(a01));
  CHECK(out(1, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(out(2, 2) == doctest::Approx(0.5));
  CHECK(out(0, 2) == doctest::Approx(0.0));
}

TEST_CASE("elementwise op forwards") {
  Matrix x(1, 3);
  x << -1, 0, 2;
  Matrix expected(1, 3);
  expected << 0, 0, 2;
  CHECK(relu(Tensor::constant(x)).value().isApprox(expected));

  const int classes = 5;
  Matrix uniform = Matrix::Zero(2, classes);
  Matrix logp = log_softmax_rows(Tensor::constant(uniform)).value();
  for (int c = 0; c < classes; ++c)
    CHECK(logp(0, c) == doctest::Approx(std::log(1.0 / classes)));

  // near-certain correct prediction pushes the nll toward zero from above
  Matrix confident(1, 3);
  confident << 30.0, 0.0, 0.0;
  Tensor loss = nll_loss(log_softmax_rows(Tensor::constant(confident)), {0});
  CHECK(loss.scalar() > 0.0);
  CHECK(loss.scalar() < 1e-10);

  Rng rng(4);
  Matrix m = random_matrix_nonzero(4, 3, rng);
  Matrix normalized = l2_normalize_rows(Tensor::constant(m)).value();
  Matrix diag = pairwise_dot(Tensor::constant(normalized), Tensor::constant(normalized)).value();
  for (int i = 0; i < 4; ++i) CHECK(diag(i, i) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("l2_normalize_rows zero row stays zero") {
  Matrix m = Matrix::Zero(2, 3);
  m(1, 0) = 3.0;
  Tensor t = Tensor::parameter(m);
  Tensor out = l2_normalize_rows(t);
  CHECK(out.value().row(0).norm() == 0.0);
  CHECK(out.value().row(1).norm() == doctest::Approx(1.0).epsilon(1e-12));
  backward(sum(out));
  CHECK(t.grad().row(0).norm() == 0.0);  // no NaN, no gradient
}

TEST_CASE("per-op finite difference checks") {
  Rng rng(5);
  auto run = [&](const char* name, auto&& builder, Matrix init) {
    Tensor x = Tensor::parameter(init);
    auto result = check_gradients([&] { return builder(x); }, {x});
    INFO(name);
    CHECK(result.max_rel_error < 1e-4);
  };
  for (int rep = 0; rep < 5; ++rep) {
    run("relu", [](Tensor& x) { return sum(relu(x)); }, random_matrix_nonzero(3, 4, rng));
    run("exp", [](Tensor& x) { return sum(gcul::exp(x)); }, random_matrix(3, 4, rng));
    run("log", [](Tensor& x) { return sum(gcul::log(x)); }, random_matrix(3, 4, rng, 0.2, 2.0));
    run("scale", [](Tensor& x) { return sum(scale(x, -2.5)); }, random_matrix(3, 4, rng));
    run("mean", [](Tensor& x) { return mean(x); }, random_matrix(3, 4, rng));
    run("log_softmax", [](Tensor& x) { return sum(log_softmax_rows(x)); },
        random_matrix(3, 4, rng));
    run("nll", [](Tensor& x) { return nll_loss(log_softmax_rows(x), {0, 2, 1}); },
        random_matrix(3, 4, rng));
    run("l2_normalize", [](Tensor& x) { return sum(l2_normalize_rows(x)); },
        random_matrix_nonzero(3, 4, rng));
    run("gather", [](Tensor& x) { return sum(gather_rows(x, {2, 0, 2})); },
        random_matrix(3, 4, rng));

    Tensor a = Tensor::parameter(random_matrix(3, 4, rng));
    Tensor b = Tensor::parameter(random_matrix(5, 4, rng));
    auto result = check_gradients([&] { return sum(pairwise_dot(a, b)); }, {a, b});
    CHECK(result.max_rel_error < 1e-4);

    Tensor c = Tensor::parameter(random_matrix(3, 4, rng));
    Tensor d = Tensor::parameter(random_matrix(3, 4, rng));
    result = check_gradients([&] { return sum(add(c, d)); }, {c, d});
    CHECK(result.max_rel_error < 1e-4);
  }
}

TEST_CASE("backward basics") {
  Tensor w = Tensor::parameter(Matrix::Constant(3, 2, 1.5));
  Tensor loss = sum(w);
  backward(loss);
  CHECK(w.grad().isApprox(Matrix::Ones(3, 2)));

  CHECK_THROWS_AS(backward(loss), ContractError);  // tape consumed

  Tensor not_scalar = Tensor::parameter(Matrix::Zero(2, 2));
  CHECK_THROWS_AS(backward(not_scalar), ContractError);
}

TEST_CASE("backward matches brute-force path products on small DAGs") {
  // Scalar DAGs assembled from {add, scale, exp}; chain rule evaluated
  // independently by enumerating paths from output to each leaf.
  struct Node {
    char op;  // 'l' leaf, '+', 's' (scale by 2), 'e' (exp)
    int lhs = -1, rhs = -1;
    double value = 0.0;
  };
  Rng rng(6);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<Node> nodes;
    const int num_leaves = 2 + static_cast<int>(rng.uniform_index(2));
    for (int i = 0; i < num_leaves; ++i)
      nodes.push_back({'l', -1, -1, rng.uniform() * 0.8 + 0.1});
    const int num_ops = 2 + static_cast<int>(rng.uniform_index(5));  // <= 6 ops
    for (int i = 0; i < num_ops; ++i) {
      const int choice = static_cast<int>(rng.uniform_index(3));
      const int lhs = static_cast<int>(rng.uniform_index(nodes.size()));
      if (choice == 0) {
        const int rhs = static_cast<int>(rng.uniform_index(nodes.size()));
        nodes.push_back({'+', lhs, rhs, nodes[lhs].value + nodes[rhs].value});
      } else if (choice == 1) {
        nodes.push_back({'s', lhs, -1, 2.0 * nodes[lhs].value});
      } else {
        nodes.push_back({'e', lhs, -1, std::exp(nodes[lhs].value)});
      }
    }

    // Brute force: d(out)/d(leaf) = sum over paths of the product of local
    // derivatives, accumulated by walking every path from the root.
    std::vector<double> path_grad(nodes.size(), 0.0);
    const int root = static_cast<int>(nodes.size()) - 1;
    std::function<void(int, double)> walk = [&](int idx, double coeff) {
      const Node& n = nodes[idx];
      if (n.op == 'l') {
        path_grad[idx] += coeff;
        return;
      }
      if (n.op == '+') {
        walk(n.lhs, coeff);
        walk(n.rhs, coeff);
      } else if (n.op == 's') {
        walk(n.lhs, coeff * 2.0);
      } else {
        walk(n.lhs, coeff * n.value);  // d exp(x) = exp(x)
      }
    };
    walk(root, 1.0);

    // The same DAG through the tape.
    std::vector<Tensor> tensors;
    for (const auto& n : nodes) {
      if (n.op == 'l')
        tensors.push_back(Tensor::parameter(Matrix::Constant(1, 1, n.value)));
      else if (n.op == '+')
        tensors.push_back(add(tensors[n.lhs], tensors[n.rhs]));
      else if (n.op == 's')
        tensors.push_back(scale(tensors[n.lhs], 2.0));
      else
        tensors.push_back(gcul::exp(tensors[n.lhs]));
    }
    backward(tensors.back());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].op != 'l') continue;
      CHECK(tensors[i].grad()(0, 0) == doctest::Approx(path_grad[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("adam") {
  AdamConfig cfg;
  cfg.learning_rate = 0.1;

  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<Tensor> params{Tensor::parameter(Matrix::Constant(2, 2, 3.0))};
    AdamState state(params, cfg);
    params[0].zero_grad();
    state.step(params);
    CHECK(params[0].value().isApprox(Matrix::Constant(2, 2, 3.0)));
  }

  SUBCASE("single scalar step matches the bias-corrected formula") {
    std::vector<Tensor> params{Tensor::parameter(Matrix::Constant(1, 1, 0.0))};
    AdamState state(params, cfg);
    Tensor loss = sum(params[0]);  // gradient = 1
    backward(loss);
    state.step(params);
    // m_hat = 1, v_hat = 1 after bias correction; update = -lr / (1 + eps)
    const double expected = -cfg.learning_rate * 1.0 / (1.0 + cfg.epsilon);
    CHECK(params[0].value()(0, 0) == doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("identical gradients give identical trajectories") {
    auto run = [&] {
      std::vector<Tensor> params{Tensor::parameter(Matrix::Constant(2, 2, 1.0))};
      AdamState state(params, cfg);
      for (int i = 0; i < 5; ++i) {
        params[0].zero_grad();
        backward(sum(matmul(params[0], params[0])));
        state.step(params);
      }
      return params[0].value();
    };
    CHECK(run() == run());
  }
}
