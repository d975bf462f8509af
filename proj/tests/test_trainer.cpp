#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>

#include "gcul/synth.hpp"
#include "gcul/trainer.hpp"
#include "testutil.hpp"

using namespace gcul;

namespace {

// Small, strongly homophilous two-block graph with clean features.
Graph small_sbm(int n, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_nodes = n;
  spec.num_classes = 2;
  spec.feature_dim = 12;
  spec.avg_degree = 4.0;
  spec.homophily = 0.95;
  spec.features_per_node = 4;
  spec.feature_noise = 0.1;
  spec.seed = seed;
  return make_synthetic_graph(spec);
}

GnnConfig small_gnn() {
  GnnConfig cfg;
  cfg.hidden_dim = 16;
  cfg.embedding_dim = 16;
  cfg.dropout = 0.5;
  return cfg;
}

}  // namespace

TEST_CASE("accuracy fixtures") {
  Graph g = build_graph(5, {{0, 1}}, Matrix::Zero(5, 2), std::vector<int>{0, 1, 0, 1, 0}, 2);
  GnnConfig cfg = small_gnn();
  GnnModel model(cfg, 2, 2, 1);

  // hand-built logits: 3 of 5 correct
  Matrix logits(5, 2);
  logits << 2, 1,  // 0 -> correct
      1, 2,        // 1 -> correct
      0, 3,        // 0 -> wrong
      5, 0,        // 1 -> wrong
      2, 0;        // 0 -> correct
  CHECK(accuracy_from_logits(logits, g, {0, 1, 2, 3, 4}) == doctest::Approx(0.6));

  // all-correct and adversarially permuted labels
  Matrix sure(5, 2);
  for (int i = 0; i < 5; ++i) {
    sure(i, g.labels[i]) = 4.0;
    sure(i, 1 - g.labels[i]) = -4.0;
  }
  CHECK(accuracy_from_logits(sure, g, {0, 1, 2, 3, 4}) == 1.0);
  Graph flipped = g;
  for (auto& y : flipped.labels) y = 1 - y;
  CHECK(accuracy_from_logits(sure, flipped, {0, 1, 2, 3, 4}) == 0.0);

  // argmax ties resolve to the lowest class index
  Matrix tie = Matrix::Zero(5, 2);
  CHECK(accuracy_from_logits(tie, g, {0}) == 1.0);
  CHECK(accuracy_from_logits(tie, g, {1}) == 0.0);

  CHECK_THROWS_AS(accuracy_from_logits(logits, g, {}), ContractError);
}

TEST_CASE("training separates a strongly homophilous SBM") {
  Graph g = small_sbm(20, 5);
  NodePartition p = split_nodes(g, 2, 0.1, 0.1, 0.9);
  TrainConfig cfg;
  cfg.max_epochs = 200;
  cfg.patience = 200;
  cfg.seed = 3;
  TrainResult result = train(g, p, small_gnn(), cfg);
  CHECK(accuracy(result.model, g, p.test_nodes) >= 0.9);
}

TEST_CASE("zero epochs returns the random-head initial model") {
  Graph g = small_sbm(600, 8);
  NodePartition p = split_nodes(g, 2, 0.1, 0.1, 0.5);
  TrainConfig cfg;
  cfg.max_epochs = 0;
  TrainResult result = train(g, p, small_gnn(), cfg);
  const double acc = accuracy(result.model, g, p.test_nodes);
  // argmax of an untrained head stays near chance (1 / num_classes), far from trained quality
  CHECK(acc <= 2.5 / g.num_classes);
}

TEST_CASE("same seed gives bitwise-identical parameters") {
  Graph g = small_sbm(60, 9);
  NodePartition p = split_nodes(g, 4, 0.1, 0.1, 0.5);
  TrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.seed = 77;
  TrainResult a = train(g, p, small_gnn(), cfg);
  TrainResult b = train(g, p, small_gnn(), cfg);
  REQUIRE(a.model.parameters().size() == b.model.parameters().size());
  for (std::size_t i = 0; i < a.model.parameters().size(); ++i)
    CHECK(a.model.parameters()[i].value() == b.model.parameters()[i].value());
}

TEST_CASE("training loss trends downward (smoothed)") {
  Graph g = small_sbm(400, 10);
  NodePartition p = split_nodes(g, 4, 0.1, 0.1, 0.5);
  TrainConfig cfg;
  cfg.max_epochs = 120;
  cfg.patience = 120;
  TrainResult result = train(g, p, small_gnn(), cfg);
  REQUIRE(result.log.size() >= 60);

  // 20-epoch moving average; allow plateau noise but no sustained increase
  std::vector<double> smooth;
  for (std::size_t i = 0; i + 20 <= result.log.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = i; j < i + 20; ++j) acc += result.log[j].train_loss;
    smooth.push_back(acc / 20.0);
  }
  for (std::size_t i = 20; i < smooth.size(); i += 20)
    CHECK(smooth[i] <= smooth[i - 20] + 1e-3);
}

TEST_CASE("retrain_reference") {
  Graph g = small_sbm(300, 11);
  NodePartition p = split_nodes(g, 6, 0.1, 0.1, 0.5);
  TrainConfig cfg;
  cfg.max_epochs = 150;
  cfg.seed = 5;

  SUBCASE("empty unlearn set reproduces train exactly") {
    NodePartition no_unlearn = p;
    no_unlearn.remain_nodes = no_unlearn.train_nodes;
    no_unlearn.unlearn_nodes.clear();
    TrainResult trained = train(g, no_unlearn, small_gnn(), cfg);
    TrainResult retrained = retrain_reference(g, no_unlearn, small_gnn(), cfg);
    for (std::size_t i = 0; i < trained.model.parameters().size(); ++i)
      CHECK(trained.model.parameters()[i].value() == retrained.model.parameters()[i].value());
  }

  SUBCASE("unlearn accuracy tracks test accuracy on the reference model") {
    TrainResult retrained = retrain_reference(g, p, small_gnn(), cfg);
    const double test_acc = accuracy(retrained.model, g, p.test_nodes);
    const double unlearn_acc = accuracy(retrained.model, g, p.unlearn_nodes);
    CHECK(std::abs(test_acc - unlearn_acc) <= 0.15);
  }

  SUBCASE("retain-structure variant also trains") {
    TrainResult retrained = retrain_reference(g, p, small_gnn(), cfg, /*retain_structure=*/true);
    CHECK(accuracy(retrained.model, g, p.test_nodes) > 0.5);
  }
}

TEST_CASE("non-finite state raises a numeric error") {
  Graph g = small_sbm(60, 12);
  g.features(5, 0) = std::numeric_limits<double>::infinity();
  NodePartition p = split_nodes(g, 4, 0.1, 0.1, 0.5);
  TrainConfig cfg;
  cfg.max_epochs = 10;
  CHECK_THROWS_AS(train(g, p, small_gnn(), cfg), NumericError);
}
