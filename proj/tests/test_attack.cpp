#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gcul/attack.hpp"
#include "gcul/synth.hpp"
#include "gcul/unlearn.hpp"
#include "testutil.hpp"

using namespace gcul;

namespace {

Graph attack_sbm(int n, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_nodes = n;
  spec.num_classes = 3;
  spec.feature_dim = 32;
  spec.avg_degree = 5.0;
  spec.homophily = 0.9;
  spec.features_per_node = 6;
  spec.feature_noise = 0.3;
  spec.seed = seed;
  return make_synthetic_graph(spec);
}

GnnConfig small_gnn() {
  GnnConfig cfg;
  cfg.hidden_dim = 16;
  cfg.embedding_dim = 16;
  return cfg;
}

AttackConfig fast_attack(int n_shadow) {
  AttackConfig cfg;
  cfg.n_shadow = n_shadow;
  cfg.seed = 99;
  cfg.shadow_train.max_epochs = 60;
  cfg.shadow_train.patience = 60;
  return cfg;
}

}  // namespace

TEST_CASE("confidence_transform") {
  SUBCASE("p = 0.5 maps to zero") {
    Eigen::RowVectorXd logits(2);
    logits << 1.3, 1.3;
    CHECK(confidence_transform(logits, 0) == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("one-logit-ahead case matches the hand softmax") {
    const int classes = 5;
    Eigen::RowVectorXd logits = Eigen::RowVectorXd::Zero(classes);
    logits(2) = 1.0;
    const double p = std::exp(1.0) / (std::exp(1.0) + classes - 1);
    const double expected = std::log(p / (1.0 - p));
    CHECK(confidence_transform(logits, 2) == doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("saturated prediction clamps") {
    Eigen::RowVectorXd logits(3);
    logits << 500.0, 0.0, 0.0;
    CHECK(confidence_transform(logits, 0) == 30.0);
    CHECK(confidence_transform(logits, 1) == -30.0);
  }
}

TEST_CASE("lira_gaussian_score") {
  // at the out-distribution mean the score is a coin flip
  CHECK(lira_gaussian_score(1.7, 1.7, 0.25, 1e-4) == doctest::Approx(0.5));
  // two sigmas above: standard normal table value
  CHECK(lira_gaussian_score(1.0 + 2.0 * 0.2, 1.0, 0.04, 1e-4) ==
        doctest::Approx(0.97725).epsilon(1e-4));
  // degenerate variance floors out and an equal phi still scores 0.5
  CHECK(lira_gaussian_score(2.0, 2.0, 0.0, 1e-4) == doctest::Approx(0.5));
}

TEST_CASE("mia_auc") {
  SUBCASE("perfect separation") {
    MiaResult r = mia_auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0});
    CHECK(r.auc == doctest::Approx(1.0));
  }

  SUBCASE("identical scores are a coin flip") {
    MiaResult r = mia_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0});
    CHECK(r.auc == doctest::Approx(0.5));
  }

  SUBCASE("hand-counted ranks") {
    MiaResult r = mia_auc({0.9, 0.8, 0.4, 0.3}, {1, 0, 1, 0});
    CHECK(r.auc == doctest::Approx(0.75));
  }

  SUBCASE("single-class labels are a contract error") {
    CHECK_THROWS_AS(mia_auc({0.1, 0.2}, {1, 1}), ContractError);
    CHECK_THROWS_AS(mia_auc({0.1, 0.2}, {0, 0}), ContractError);
  }

  SUBCASE("matches the brute-force pair count on random inputs") {
    Rng rng(7);
    for (int rep = 0; rep < 30; ++rep) {
      const int n = 4 + static_cast<int>(rng.uniform_index(197));
      std::vector<double> scores(n);
      std::vector<int> labels(n);
      int pos = 0;
      for (int i = 0; i < n; ++i) {
        // coarse grid so ties actually occur
        scores[i] = std::floor(rng.uniform() * 8.0) / 8.0;
        labels[i] = rng.bernoulli(0.5) ? 1 : 0;
        pos += labels[i];
      }
      if (pos == 0 || pos == n) continue;
      double pairs = 0.0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          if (labels[i] != 1 || labels[j] != 0) continue;
          if (scores[i] > scores[j]) pairs += 1.0;
          else if (scores[i] == scores[j]) pairs += 0.5;
        }
      const double expected = pairs / (static_cast<double>(pos) * (n - pos));
      CHECK(mia_auc(scores, labels).auc == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  SUBCASE("roc endpoints and low-fpr readout") {
    MiaResult r = mia_auc({0.9, 0.8, 0.7, 0.1, 0.05, 0.01}, {1, 1, 0, 1, 0, 0});
    CHECK(r.roc.front().fpr == 0.0);
    CHECK(r.roc.front().tpr == 0.0);
    CHECK(r.roc.back().fpr == 1.0);
    CHECK(r.roc.back().tpr == 1.0);
    // at threshold 0.8: tpr 2/3 with fpr 0
    CHECK(r.tpr_at_fpr_01 == doctest::Approx(2.0 / 3.0));
    const std::string csv = r.roc_csv();
    CHECK(csv.find("fpr,tpr,threshold") == 0);
  }
}

TEST_CASE("train_shadows") {
  Graph g = attack_sbm(200, 55);
  NodePartition p = split_nodes(g, 3, 0.2, 0.2, 0.5);
  std::vector<int> candidates = p.unlearn_nodes;
  candidates.insert(candidates.end(), p.test_nodes.begin(),
                    p.test_nodes.begin() + p.unlearn_nodes.size());

  SUBCASE("memberships concentrate near half") {
    AttackConfig cfg = fast_attack(16);
    cfg.shadow_train.max_epochs = 2;  // membership bookkeeping is the point here
    ShadowEnsemble ensemble = train_shadows(g, p, candidates, small_gnn(), cfg);
    REQUIRE(ensemble.models.size() == 16);
    for (const auto& mask : ensemble.member) {
      int members = 0;
      for (auto m : mask) members += m;
      CHECK(members > static_cast<int>(0.3 * mask.size()));
      CHECK(members < static_cast<int>(0.7 * mask.size()));
    }
  }

  SUBCASE("two shadows run end to end and score") {
    AttackConfig cfg = fast_attack(2);
    ShadowEnsemble ensemble = train_shadows(g, p, candidates, small_gnn(), cfg);
    GnnModel target(small_gnn(), g.feature_dim(), g.num_classes, 123);
    // a candidate may be IN for both shadows with only two of them; find a
    // node with at least one OUT shadow
    int node = -1;
    for (std::size_t i = 0; i < ensemble.candidates.size() && node < 0; ++i)
      if (!ensemble.member[0][i] || !ensemble.member[1][i]) node = ensemble.candidates[i];
    REQUIRE(node >= 0);
    const double score = lira_score(g, ensemble, target, node, cfg);
    CHECK(score >= 0.0);
    CHECK(score <= 1.0);
  }

  SUBCASE("identical seeds give identical ensembles, including under --jobs") {
    AttackConfig cfg = fast_attack(4);
    cfg.shadow_train.max_epochs = 10;
    ShadowEnsemble a = train_shadows(g, p, candidates, small_gnn(), cfg);
    cfg.jobs = 3;
    ShadowEnsemble b = train_shadows(g, p, candidates, small_gnn(), cfg);
    REQUIRE(a.models.size() == b.models.size());
    CHECK(a.member == b.member);
    for (std::size_t s = 0; s < a.models.size(); ++s)
      for (std::size_t i = 0; i < a.models[s].parameters().size(); ++i)
        CHECK(a.models[s].parameters()[i].value() == b.models[s].parameters()[i].value());
  }

  SUBCASE("a node that is IN for every shadow cannot be scored") {
    AttackConfig cfg = fast_attack(2);
    cfg.shadow_train.max_epochs = 1;
    ShadowEnsemble ensemble = train_shadows(g, p, candidates, small_gnn(), cfg);
    for (auto& mask : ensemble.member) std::fill(mask.begin(), mask.end(), 1);
    GnnModel target(small_gnn(), g.feature_dim(), g.num_classes, 123);
    CHECK_THROWS_AS(lira_score(g, ensemble, target, ensemble.candidates[0], cfg),
                    ContractError);
  }
}

TEST_CASE("a never-trained target model carries no membership signal") {
  Graph g = attack_sbm(400, 56);
  NodePartition p = split_nodes(g, 3, 0.2, 0.15, 0.5);
  std::vector<int> eval_nodes = p.unlearn_nodes;
  eval_nodes.insert(eval_nodes.end(), p.test_nodes.begin(),
                    p.test_nodes.begin() + p.unlearn_nodes.size());
  std::vector<int> member_labels(p.unlearn_nodes.size(), 1);
  member_labels.resize(eval_nodes.size(), 0);

  AttackConfig cfg = fast_attack(8);
  ShadowEnsemble ensemble = train_shadows(g, p, eval_nodes, small_gnn(), cfg);
  GnnModel random_target(small_gnn(), g.feature_dim(), g.num_classes, 2024);
  MiaResult result =
      mia_auc(lira_scores(g, ensemble, random_target, eval_nodes, cfg), member_labels);
  CHECK(result.auc > 0.35);
  CHECK(result.auc < 0.65);
}
