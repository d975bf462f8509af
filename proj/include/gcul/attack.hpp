#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcul/gnn.hpp"
#include "gcul/graph.hpp"
#include "gcul/trainer.hpp"

namespace gcul {

struct AttackConfig {
  int n_shadow = 16;
  std::uint64_t seed = 5;
  int jobs = 1;                      // parallel shadow trainings
  TrainConfig shadow_train;          // shadows may train shorter than the target
  double variance_floor = 1e-4;
  int min_out_for_local_variance = 4;
  double confidence_clamp = 30.0;

  void validate() const {
    if (n_shadow < 2) throw ConfigError("AttackConfig: n_shadow must be >= 2");
    if (jobs < 1) throw ConfigError("AttackConfig: jobs must be >= 1");
  }
};

/// Shadow models with their exact membership bookkeeping. Shadow s was trained
/// with supervision on { candidates[i] : member[s][i] } plus every
/// non-candidate training node.
struct ShadowEnsemble {
  std::vector<GnnModel> models;
  std::vector<int> candidates;                    // sorted global ids
  std::vector<std::vector<std::uint8_t>> member;  // [shadow][candidate index]

  int candidate_index(int node) const;
};

/// Each shadow supervises an independent Bernoulli(1/2) subsample of the
/// candidates. Deterministic per seed, independent of the jobs count.
ShadowEnsemble train_shadows(const Graph& graph, const NodePartition& partition,
                             const std::vector<int>& candidates, const GnnConfig& gnn_cfg,
                             const AttackConfig& cfg);

/// Logit-scaled confidence phi = log(p_y / (1 - p_y)), clamped to +-clamp.
double confidence_transform(const Eigen::Ref<const Eigen::RowVectorXd>& logits, int label,
                            double clamp = 30.0);

/// phi of every node in `nodes` under one model, full-graph forward.
std::vector<double> model_confidences(const GnnModel& model, const Graph& graph,
                                      const std::vector<int>& nodes, double clamp = 30.0);

/// CDF of the target's phi under the Gaussian fit of the OUT-shadow phis;
/// 0.5 at the mean, ~0.977 two sigmas above it. Variance is floored.
double lira_gaussian_score(double target_phi, double out_mean, double out_variance,
                           double variance_floor);

/// Offline likelihood-ratio scores: per node, phi under the target model is
/// placed against the Gaussian fit of its OUT-shadow phis; the score is the
/// normal CDF (higher = more member-like). Nodes never OUT in any shadow are
/// an error; nodes with few OUT shadows fall back to the pooled variance.
std::vector<double> lira_scores(const Graph& graph, const ShadowEnsemble& ensemble,
                                const GnnModel& target, const std::vector<int>& nodes,
                                const AttackConfig& cfg);

double lira_score(const Graph& graph, const ShadowEnsemble& ensemble, const GnnModel& target,
                  int node, const AttackConfig& cfg);

struct RocPoint {
  double fpr;
  double tpr;
  double threshold;
};

struct MiaResult {
  std::vector<double> scores;
  std::vector<int> member_labels;  // 1 = member
  double auc = 0.0;
  std::vector<RocPoint> roc;
  double tpr_at_fpr_01 = 0.0;
  double tpr_at_fpr_05 = 0.0;
  double tpr_at_fpr_10 = 0.0;

  std::string roc_csv() const;
  std::string to_json() const;
};

/// Rank-statistic AUC with tie averaging, plus the full ROC sweep.
MiaResult mia_auc(const std::vector<double>& scores, const std::vector<int>& member_labels);

}  // namespace gcul
