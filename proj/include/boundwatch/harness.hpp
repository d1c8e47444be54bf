#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "boundwatch/benchmarks.hpp"
#include "boundwatch/certificate.hpp"
#include "boundwatch/detectors.hpp"
#include "boundwatch/training.hpp"

namespace boundwatch {

struct DetectorRates {
  double alpha_ood = 0.05, alpha_wd = 0.05;              // hypothesis testing
  double delta_o = 0.01, delta_o_prime = 0.04;           // confidence interval
  double delta_w = 0.01, delta_w_prime = 0.04;

  void validate() const;
};

struct PriorSettings {
  double log_variance = -4.0;
  double fit_temperature = 0.1;   // navigation prior fit
  double fit_ridge = 1e-3;
  double fit_scale = 8.0;
  std::uint64_t fit_dataset_size = 2000;
};

struct ExperimentConfig {
  BenchmarkSpec benchmark;
  EnvDistributionParams train_params = SmoothQuadraticDist{};
  std::vector<EnvDistributionParams> test_param_grid;
  std::optional<EnvDistributionParams> validation_ood_params;

  std::uint64_t m = 200;
  std::uint64_t n = 10;
  std::uint64_t trials_per_cell = 2000;

  TrainConfig train;
  PriorSettings prior;
  DetectorRates rates;

  double baseline_quantile = 0.95;
  std::uint64_t baseline_holdout = 1000;

  std::uint64_t oracle_samples = 100000;
  std::uint64_t gap_oracle_samples = 20000;
  double gap_confidence = 0.9;
  std::uint64_t fp_sets_per_trial = 5;
  std::uint64_t fn_sets_per_trial = 5;
  std::uint64_t gap_sets_per_trial = 50;

  std::vector<std::pair<double, double>> rate_grid;  // (fp sum, fn sum)

  std::uint64_t master_seed = 1;
  std::string output_dir = "results";
  std::string run_id;  // defaults to run_<master_seed in hex>

  void validate() const;
  std::string resolved_run_id() const;
};

// Strict parser: top-level "version" required, unknown keys anywhere are
// rejected so misspelled experiment settings cannot be silently ignored.
ExperimentConfig config_from_json(const std::string& text);
std::string to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::string& path);

// ---------------------------------------------------------------------------
// Training pipeline shared by every experiment entry point.
// ---------------------------------------------------------------------------

struct TrainedPipeline {
  DiagonalGaussian prior;
  DiagonalGaussian posterior;
  WeightSample policy;
  double empirical_cost = 0.0;
  double d2 = 0.0;
  Certificate certificate;  // at the training delta
  TrainTrace trace;
};

TrainedPipeline run_training_pipeline(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Guarantee validation: repeated full train+certify trials measuring bound
// coverage, detector false positive/negative rates, and the validity of the
// certified cost-gap lower bound.
// ---------------------------------------------------------------------------

struct RateReport {
  std::uint64_t count = 0;
  std::uint64_t trials = 0;
  double rate = 0.0;
  double std_error = 0.0;  // binomial
  double bound = 0.0;      // the guaranteed level this rate is held against
};

struct ValidationReport {
  std::uint64_t trials = 0;
  RateReport upper_violation;  // oracle cost above the upper bound
  RateReport lower_violation;  // oracle cost below the lower bound
  RateReport fp_ci, fp_ht;     // OOD declared on within-distribution data
  RateReport fn_ci, fn_ht;     // WD declared on out-of-distribution data
  RateReport gap_validity;     // certified gap lower bound held (rate >= bound)
};

// Requires trials_per_cell >= 2000 and validation_ood_params.
ValidationReport run_guarantee_validation(const ExperimentConfig& config);
std::string to_json(const ValidationReport& report);

// ---------------------------------------------------------------------------
// Detection sweep across the test grid.
// ---------------------------------------------------------------------------

struct CellSummary {
  std::uint64_t cell_index = 0;
  EnvDistributionParams params = SmoothQuadraticDist{};
  double gap = 0.0;           // oracle expected cost gap vs training
  double gap_std_error = 0.0;
  std::uint64_t trials = 0;
  std::uint64_t n = 0;

  std::uint64_t ht_ood = 0, ht_wd = 0, ht_unknown = 0;
  std::uint64_t ci_ood = 0, ci_wd = 0, ci_unknown = 0;
  std::uint64_t msp_ood = 0, msp_not_ood = 0;
  std::uint64_t maxlogit_ood = 0, maxlogit_not_ood = 0;
  bool baselines_ran = false;

  double mean_test_cost = 0.0;
  double mean_one_minus_p_ood = 0.0;  // hypothesis-testing indicator
  double mean_delta_c_ood = 0.0;
  double mean_delta_c_wd = 0.0;

  bool operator==(const CellSummary&) const = default;
};

struct SweepResult {
  std::vector<CellSummary> cells;
  std::uint64_t n = 0;
  std::uint64_t trials_per_cell = 0;
  std::string certificate_id;

  bool operator==(const SweepResult&) const = default;
};

SweepResult run_detection_sweep(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Rate tuning: re-evaluates the confidence-interval detector over a grid of
// permissible (false positive, false negative) rate sums. Per cell, the
// Unknown fraction must be nonincreasing as both sums grow; violations are a
// logic error.
// ---------------------------------------------------------------------------

struct RateTuningCell {
  double fp_sum = 0.0, fn_sum = 0.0;
  std::uint64_t cell_index = 0;
  double gap = 0.0;
  std::uint64_t ood = 0, wd = 0, unknown = 0, trials = 0;

  bool operator==(const RateTuningCell&) const = default;
};

struct RateTuningReport {
  std::vector<RateTuningCell> cells;

  bool operator==(const RateTuningReport&) const = default;
};

RateTuningReport run_rate_tuning(const ExperimentConfig& config,
                                 const std::vector<std::pair<double, double>>& grid);

// ---------------------------------------------------------------------------
// Persistence: results/<run_id>/{config.json, certificate.json, sweep.csv,
// sweep.json, rates.csv, validation.json, plotdata/*.csv}. Returns the file
// paths written. All emission is deterministic byte-for-byte for a given
// (config, seed), independent of worker count.
// ---------------------------------------------------------------------------

struct RunArtifacts {
  std::string directory;
  std::vector<std::string> files;
};

RunArtifacts persist_results(const ExperimentConfig& config,
                             const SweepResult* sweep,
                             const RateTuningReport* rates,
                             const ValidationReport* validation,
                             const Certificate* certificate);

SweepResult load_sweep(const std::string& run_dir);
std::string to_json(const SweepResult& sweep);
SweepResult sweep_from_json(const std::string& text);

}  // namespace boundwatch
