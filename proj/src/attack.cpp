#include "gcul/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace gcul {

int ShadowEnsemble::candidate_index(int node) const {
  auto it = std::lower_bound(candidates.begin(), candidates.end(), node);
  if (it == candidates.end() || *it != node)
    throw ContractError("ShadowEnsemble: node " + std::to_string(node) + " is not a candidate");
  return static_cast<int>(it - candidates.begin());
}

ShadowEnsemble train_shadows(const Graph& graph, const NodePartition& partition,
                             const std::vector<int>& candidates, const GnnConfig& gnn_cfg,
                             const AttackConfig& cfg) {
  cfg.validate();
  if (candidates.empty()) throw ContractError("train_shadows: no candidates");

  ShadowEnsemble ensemble;
  ensemble.candidates = candidates;
  std::sort(ensemble.candidates.begin(), ensemble.candidates.end());

  std::vector<std::uint8_t> is_candidate(graph.num_nodes, 0);
  for (int v : ensemble.candidates) is_candidate[v] = 1;
  std::vector<int> base_supervised;  // training nodes that are not candidates
  for (int v : partition.train_nodes)
    if (!is_candidate[v]) base_supervised.push_back(v);

  Rng seeder(cfg.seed);
  ensemble.member.resize(cfg.n_shadow);
  for (int s = 0; s < cfg.n_shadow; ++s) {
    Rng rng = seeder.fork(1000 + s);
    ensemble.member[s].resize(ensemble.candidates.size());
    for (std::size_t i = 0; i < ensemble.candidates.size(); ++i)
      ensemble.member[s][i] = rng.bernoulli(0.5) ? 1 : 0;
  }
  // Every candidate needs at least one OUT shadow to be scorable; flip one
  // membership for the rare all-IN node before any training happens.
  Rng fixup = seeder.fork(3000);
  for (std::size_t i = 0; i < ensemble.candidates.size(); ++i) {
    bool any_out = false;
    for (int s = 0; s < cfg.n_shadow; ++s) any_out = any_out || !ensemble.member[s][i];
    if (!any_out) ensemble.member[fixup.uniform_index(cfg.n_shadow)][i] = 0;
  }

  std::vector<std::vector<int>> supervised(cfg.n_shadow);
  for (int s = 0; s < cfg.n_shadow; ++s) {
    supervised[s] = base_supervised;
    for (std::size_t i = 0; i < ensemble.candidates.size(); ++i)
      if (ensemble.member[s][i]) supervised[s].push_back(ensemble.candidates[i]);
    std::sort(supervised[s].begin(), supervised[s].end());
  }

  ensemble.models.resize(cfg.n_shadow);
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto run_range = [&](int begin, int end) {
    for (int s = begin; s < end; ++s) {
      try {
        TrainConfig tc = cfg.shadow_train;
        tc.seed = splitmix64(cfg.seed ^ splitmix64(2000 + s));
        ensemble.models[s] =
            train_supervised(graph, supervised[s], partition.eval_nodes, gnn_cfg, tc).model;
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  const int jobs = std::min(cfg.jobs, cfg.n_shadow);
  if (jobs <= 1) {
    run_range(0, cfg.n_shadow);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (cfg.n_shadow + jobs - 1) / jobs;
    for (int j = 0; j < jobs; ++j) {
      const int begin = j * chunk;
      const int end = std::min(cfg.n_shadow, begin + chunk);
      if (begin < end) pool.emplace_back(run_range, begin, end);
    }
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return ensemble;
}

double confidence_transform(const Eigen::Ref<const Eigen::RowVectorXd>& logits, int label,
                            double clamp) {
  if (!logits.allFinite()) throw NumericError("confidence_transform: non-finite logits");
  if (label < 0 || label >= logits.size())
    throw ContractError("confidence_transform: label out of range");
  const double mx = logits.maxCoeff();
  const double lse = std::log((logits.array() - mx).exp().sum()) + mx;
  const double log_p = logits(label) - lse;          // log p_y, <= 0
  const double one_minus_p = -std::expm1(log_p);     // 1 - p_y, stable near p = 1
  double phi;
  if (one_minus_p <= 0.0) {
    phi = clamp;
  } else {
    phi = log_p - std::log(one_minus_p);
  }
  return std::clamp(phi, -clamp, clamp);
}

std::vector<double> model_confidences(const GnnModel& model, const Graph& graph,
                                      const std::vector<int>& nodes, double clamp) {
  Propagator prop = make_propagator(model.config().arch, graph);
  ForwardResult fw = forward_all(model, graph, prop);
  const Matrix& logits = fw.logits.value();
  std::vector<double> out(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i)
    out[i] = confidence_transform(logits.row(nodes[i]), graph.labels[nodes[i]], clamp);
  return out;
}

std::vector<double> lira_scores(const Graph& graph, const ShadowEnsemble& ensemble,
                                const GnnModel& target, const std::vector<int>& nodes,
                                const AttackConfig& cfg) {
  if (ensemble.models.empty()) throw ContractError("lira_scores: empty ensemble");
  std::vector<double> target_phi = model_confidences(target, graph, nodes, cfg.confidence_clamp);

  // phi of every requested node under every shadow.
  std::vector<std::vector<double>> shadow_phi(ensemble.models.size());
  for (std::size_t s = 0; s < ensemble.models.size(); ++s)
    shadow_phi[s] = model_confidences(ensemble.models[s], graph, nodes, cfg.confidence_clamp);

  std::vector<double> mean(nodes.size()), var(nodes.size());
  std::vector<int> out_count(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const int ci = ensemble.candidate_index(nodes[i]);
    double m = 0.0, m2 = 0.0;
    int count = 0;
    for (std::size_t s = 0; s < ensemble.models.size(); ++s) {
      if (ensemble.member[s][ci]) continue;  // IN shadow; offline variant uses OUT only
      const double phi = shadow_phi[s][i];
      m += phi;
      m2 += phi * phi;
      ++count;
    }
    if (count == 0)
      throw ContractError("lira_scores: node " + std::to_string(nodes[i]) +
                          " was never OUT in any shadow; add shadows");
    m /= count;
    mean[i] = m;
    var[i] = std::max(0.0, m2 / count - m * m);
    out_count[i] = count;
  }

  // Pooled variance backs nodes with too few OUT shadows.
  double pooled = 0.0;
  int pooled_count = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (out_count[i] >= cfg.min_out_for_local_variance) {
      pooled += var[i];
      ++pooled_count;
    }
  }
  pooled = pooled_count > 0 ? pooled / pooled_count : cfg.variance_floor;

  std::vector<double> scores(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double v = out_count[i] >= cfg.min_out_for_local_variance ? var[i] : pooled;
    scores[i] = lira_gaussian_score(target_phi[i], mean[i], v, cfg.variance_floor);
  }
  return scores;
}

double lira_gaussian_score(double target_phi, double out_mean, double out_variance,
                           double variance_floor) {
  const double sigma = std::sqrt(std::max(out_variance, variance_floor));
  const double z = (target_phi - out_mean) / sigma;
  return 0.5 * std::erfc(-z / std::sqrt(2.0));  // normal CDF
}

double lira_score(const Graph& graph, const ShadowEnsemble& ensemble, const GnnModel& target,
                  int node, const AttackConfig& cfg) {
  return lira_scores(graph, ensemble, target, {node}, cfg)[0];
}

MiaResult mia_auc(const std::vector<double>& scores, const std::vector<int>& member_labels) {
  if (scores.size() != member_labels.size())
    throw ContractError("mia_auc: scores/labels length mismatch");
  const auto n = scores.size();
  std::size_t n_pos = 0;
  for (int y : member_labels) {
    if (y != 0 && y != 1) throw ContractError("mia_auc: labels must be 0/1");
    n_pos += y;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ContractError("mia_auc: both classes required");

  MiaResult result;
  result.scores = scores;
  result.member_labels = member_labels;

  // Rank statistic with tie averaging.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg_rank;
    i = j + 1;
  }
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (member_labels[i]) pos_rank_sum += rank[i];
  result.auc = (pos_rank_sum - 0.5 * static_cast<double>(n_pos) * (n_pos + 1)) /
               (static_cast<double>(n_pos) * static_cast<double>(n_neg));

  // ROC sweep over distinct thresholds, descending.
  result.roc.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = n; i > 0;) {
    std::size_t j = i;
    while (j > 1 && scores[order[j - 2]] == scores[order[i - 1]]) --j;
    for (std::size_t t = j; t <= i; ++t) {
      if (member_labels[order[t - 1]])
        ++tp;
      else
        ++fp;
    }
    result.roc.push_back({static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos,
                          scores[order[i - 1]]});
    i = j - 1;
  }

  auto tpr_at = [&](double fpr) {
    double best = 0.0;
    for (const auto& p : result.roc)
      if (p.fpr <= fpr) best = std::max(best, p.tpr);
    return best;
  };
  result.tpr_at_fpr_01 = tpr_at(0.01);
  result.tpr_at_fpr_05 = tpr_at(0.05);
  result.tpr_at_fpr_10 = tpr_at(0.10);
  return result;
}

std::string MiaResult::roc_csv() const {
  std::ostringstream out;
  out << "fpr,tpr,threshold\n";
  char buf[128];
  for (const auto& p : roc) {
    if (std::isinf(p.threshold))
      std::snprintf(buf, sizeof(buf), "%.6f,%.6f,inf\n", p.fpr, p.tpr);
    else
      std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.9f\n", p.fpr, p.tpr, p.threshold);
    out << buf;
  }
  return out.str();
}

std::string MiaResult::to_json() const {
  char buf[256];
  std::ostringstream out;
  out << "{\n";
  std::snprintf(buf, sizeof(buf), "  \"auc\": %.6f,\n", auc);
  out << buf;
  std::snprintf(buf, sizeof(buf), "  \"tpr_at_fpr_0.01\": %.6f,\n", tpr_at_fpr_01);
  out << buf;
  std::snprintf(buf, sizeof(buf), "  \"tpr_at_fpr_0.05\": %.6f,\n", tpr_at_fpr_05);
  out << buf;
  std::snprintf(buf, sizeof(buf), "  \"tpr_at_fpr_0.10\": %.6f,\n", tpr_at_fpr_10);
  out << buf;
  out << "  \"num_scored\": " << scores.size() << "\n";
  out << "}\n";
  return out.str();
}

}  // namespace gcul
