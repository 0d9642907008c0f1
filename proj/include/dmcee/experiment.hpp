#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dmcee/dose.hpp"
#include "dmcee/eval.hpp"
#include "dmcee/synth.hpp"

namespace dmcee {

inline constexpr const char* kVersion = "1.0.0";

enum class DataMode { synth, real, standin };

struct EvalSettings {
  Index k = 5;
  bool align = true;
  double alpha = 0.05;
  Index deconfounder_k = 3;
};

struct DoseSettings {
  BoostingConfig boosting;
  GroupingRule grouping;
  Index grid_points = 25;
};

struct SweepSettings {
  std::vector<double> alpha{1e-10, 1e-8, 1e-6, 1e-4, 1e-2};
  std::vector<double> beta{1e-10, 1e-8, 1e-6, 1e-4, 1e-2};
  /// Covariate hidden in every cell; empty hides nothing.
  std::string hide;
};

struct ExperimentConfig {
  std::string experiment = "experiment";
  DataMode mode = DataMode::synth;
  SynthConfig synth;
  TrainConfig train;
  std::vector<std::string> estimators;
  EvalSettings eval;
  DoseSettings dose;
  /// Covariate groups hidden one at a time by `ood`; empty means all of x_r.
  std::vector<std::string> ood_hide;
  SweepSettings sweep;
  std::filesystem::path input;
  std::filesystem::path output = "out";

  std::filesystem::path experiment_dir() const { return output / experiment; }
  void check() const;
};

/// lr, lr_con, gcn, deconfounder, d_out, d_cau, dmcee
const std::vector<std::string>& all_estimators();

ExperimentConfig default_experiment_config(DataMode mode = DataMode::synth);
/// Keys absent from `j` keep their defaults; unknown keys throw ConfigError.
ExperimentConfig experiment_config_from_json(const json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Config echo for manifests; the output directory is left out so moved
/// output trees stay byte-identical.
json to_json(const ExperimentConfig& config);

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t purpose, std::uint64_t index);

/// Number of worker threads: DMCEE_WORKERS when set, else the hardware count.
unsigned worker_count();

struct MethodOutcome {
  EffectEstimate estimate;
  VectorXd test_prediction;
  std::optional<FittedModel> model;
  std::optional<MatrixXd> train_surrogate;  // γ_R, e'_R or Ẑ of the training rows
  double diagnostic = std::numeric_limits<double>::quiet_NaN();  // deconfounder held-out log-likelihood
};

struct SplitInfo {
  Index k = 0;
  Index test_cluster = 0;
  std::vector<Index> train_rows;
  std::vector<Index> test_rows;
  VectorXd dist;  // filled by the OOD rule only
};

/// Fits `method` on the train rows of `dataset` and predicts the outcome of
/// its test rows. Graph encoders see the test restaurants through the full
/// interaction graph.
MethodOutcome run_method(const std::string& method, const Dataset& dataset, const SplitInfo& split,
                         const ExperimentConfig& config, std::uint64_t train_seed, std::uint64_t baseline_seed);

/// k-means on x_r, one non-empty cluster drawn uniformly as test.
SplitInfo random_cluster_split(const Dataset& dataset, Index k, std::uint64_t seed);
/// k-means on x_r, the cluster farthest from the others as test.
SplitInfo farthest_cluster_split(const Dataset& dataset, Index k, std::uint64_t seed);

struct ReplicateResult {
  Index replicate = 0;
  SplitInfo split;
  std::vector<std::string> methods;
  std::vector<MethodOutcome> outcomes;
  std::vector<EvalReport> reports;
};

struct RunResult {
  std::vector<ReplicateResult> replicates;
  AggregateReport aggregate;
};

/// The synthetic replicate protocol without writing files.
RunResult run_synthetic(const ExperimentConfig& config);

struct OodRow {
  std::string covariate;
  SplitInfo split;
  std::vector<std::string> methods;
  std::vector<RegressionMetrics> metrics;
};

std::vector<OodRow> run_ood(const Dataset& dataset, const ExperimentConfig& config);

struct DoseResult {
  EffectEstimate estimate;
  std::vector<Index> significant;
  std::vector<RestaurantGroup> groups;
  std::vector<DoseCurve> curves;
  std::vector<std::string> skipped;  // "group/aspect: reason"
};

DoseResult run_dose(const Dataset& dataset, const ExperimentConfig& config);

struct SweepCell {
  double alpha = 0.0;
  double beta = 0.0;
  RegressionMetrics metrics;
};

std::vector<SweepCell> run_sweep(const Dataset& dataset, const ExperimentConfig& config);

/// The dataset a non-replicate command works on: replicate 0 (synth), the
/// stand-in (standin) or the CSV directory `input` (real).
Dataset load_experiment_data(const ExperimentConfig& config);

// Commands. Each writes below config.experiment_dir() and finishes with manifest.json.
void cmd_synth(const ExperimentConfig& config);
void cmd_run(const ExperimentConfig& config);
void cmd_ood(const ExperimentConfig& config);
void cmd_dose(const ExperimentConfig& config);
void cmd_sweep(const ExperimentConfig& config);
/// Returns the validation report of the dataset in `input`.
ValidationReport cmd_validate(const std::filesystem::path& input, bool& loaded, std::string& load_error);

}  // namespace dmcee
