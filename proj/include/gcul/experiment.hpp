#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gcul/attack.hpp"
#include "gcul/gnn.hpp"
#include "gcul/graph.hpp"
#include "gcul/synth.hpp"
#include "gcul/trainer.hpp"
#include "gcul/unlearn.hpp"

namespace gcul {

/// Flat key=value config with [section] headers and '#' comments. Keys are
/// addressed as "section.key".
class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::filesystem::path& path);
  static KeyValueConfig parse_text(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

struct ExperimentConfig {
  // dataset
  std::filesystem::path content_path;  // raw ingestion pair, or
  std::filesystem::path cites_path;
  std::filesystem::path dataset_dir;   // pre-ingested canonical directory, or
  bool synthetic = false;              // generated stand-in
  SyntheticSpec synthetic_spec;
  bool row_normalize = true;
  double test_fraction = 0.1;
  double unlearn_fraction = 0.1;
  double eval_fraction = 0.5;

  // modules
  GnnConfig gnn;
  TrainConfig train;
  UnlearnConfig unlearn;
  AttackConfig attack;
  bool attack_enabled = true;
  bool retain_structure = false;

  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "run";

  void apply_seed();  // derives the per-module seeds from the global one
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig experiment_config_from(const KeyValueConfig& kv);

/// Loads the configured dataset (raw pair, canonical dir, or synthetic) and
/// applies feature normalization if configured.
Graph load_dataset(const ExperimentConfig& cfg);

void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string format_double(double v);

struct SummaryRow {
  double ratio;
  std::string method;  // original | unlearned | retrained
  double test_acc;
  double unlearn_acc;
  double unlearn_score;
  std::optional<double> mia_auc;
  double runtime_s;
};

std::string summary_csv(const std::vector<SummaryRow>& rows);
std::string train_log_csv(const std::vector<EpochLogRow>& log);

struct ExperimentOptions {
  std::vector<double> ratios;  // empty = config's unlearn_fraction only
  bool no_reconstruction = false;
  int jobs = 1;
};

struct ExperimentResult {
  std::vector<SummaryRow> rows;
};

/// Full pipeline: train, snapshot, unlearn, retrain reference, evaluate all
/// three models, attack all three, write artifacts under cfg.out_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentOptions& opts = {});

}  // namespace gcul
