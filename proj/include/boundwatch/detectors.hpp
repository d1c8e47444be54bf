#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "boundwatch/benchmarks.hpp"
#include "boundwatch/certificate.hpp"

namespace boundwatch {

enum class Verdict { OOD, WD, Unknown };

std::string verdict_name(Verdict v);

// Hypothesis-testing route: Hoeffding bounds on the p-values of the two
// one-sided tests, each compared against its own significance level.
struct HypothesisIndicators {
  double tau_upper = 0.0;    // exceedance of the test cost above the upper bound
  double tau_lower = 0.0;    // shortfall of the test cost below the lower bound
  double p_bound_ood = 1.0;  // exp(-2 n tau_upper^2)
  double p_bound_wd = 1.0;   // exp(-2 n tau_lower^2)
  double alpha_ood = 0.0;
  double alpha_wd = 0.0;
};

// Confidence-interval route: certified lower bounds on the expected cost gap
// in both directions.
struct IntervalIndicators {
  double gamma_ood = 0.0;   // sqrt(ln(1/delta'_O) / (2n))
  double gamma_wd = 0.0;    // sqrt(ln(1/delta'_W) / (2n))
  double delta_c_ood = 0.0; // test_cost - gamma_ood - upper_bound
  double delta_c_wd = 0.0;  // lower_bound - test_cost - gamma_wd
  double delta_o = 0.0, delta_o_prime = 0.0;
  double delta_w = 0.0, delta_w_prime = 0.0;
};

struct DetectionVerdict {
  Verdict verdict = Verdict::Unknown;
  double test_cost = 0.0;
  std::uint64_t n = 0;
  std::string certificate_id;
  std::optional<HypothesisIndicators> hypothesis;
  std::optional<IntervalIndicators> interval;
};

// Declares OOD when exp(-2n tau_upper^2) <= alpha_ood, WD when
// exp(-2n tau_lower^2) <= alpha_wd, Unknown otherwise. The two certificates
// may carry different deltas but must describe the same policy and training
// set (equal empirical cost and m); both conditions firing at once is then
// impossible and is checked as an internal error.
DetectionVerdict detect_hypothesis(double test_cost, std::uint64_t n,
                                   const Certificate& cert_upper,
                                   const Certificate& cert_lower,
                                   double alpha_ood, double alpha_wd);
DetectionVerdict detect_hypothesis(double test_cost, std::uint64_t n,
                                   const Certificate& cert, double alpha_ood,
                                   double alpha_wd);

// Declares OOD when delta_c_ood > 0, WD when delta_c_wd >= 0, Unknown
// otherwise. Requires delta_o + delta_o_prime < 1 and
// delta_w + delta_w_prime < 1; those sums are the guaranteed false positive
// and false negative rates.
DetectionVerdict detect_confidence_interval(double test_cost, std::uint64_t n,
                                            const Certificate& cert_upper,
                                            const Certificate& cert_lower,
                                            double delta_o, double delta_o_prime,
                                            double delta_w, double delta_w_prime);
DetectionVerdict detect_confidence_interval(double test_cost, std::uint64_t n,
                                            const Certificate& cert,
                                            double delta_o, double delta_o_prime,
                                            double delta_w, double delta_w_prime);

// One line: verdict then the indicator fields of the method that ran, e.g.
// "OOD p_ood=0.0067 p_wd=1" or "UNKNOWN dCo=-0.3 dCw=-0.5".
std::string verdict_line(const DetectionVerdict& v);

// Full record: verdict, test cost, n, certificate id, configured rates, and
// every indicator value.
std::string to_json(const DetectionVerdict& v);

// ---------------------------------------------------------------------------
// Baselines: anomaly scores from the policy's categorical head, oriented so
// larger means more anomalous, thresholded at an empirical quantile of fresh
// training-distribution scores.
// ---------------------------------------------------------------------------

enum class ScoreKind { MSP, MaxLogit };

struct BaselineCalibration {
  ScoreKind score_kind = ScoreKind::MSP;
  double threshold = 0.0;
  double calibration_quantile = 0.95;
};

// MSP: 1 - max softmax probability. MaxLogit: -max logit.
double baseline_score(ScoreKind kind, const std::vector<double>& logits);

// Per-environment scores of a dataset under the policy. Throws for families
// without a categorical head.
std::vector<double> baseline_scores(ScoreKind kind, const BenchmarkSpec& spec,
                                    const EnvironmentDataset& dataset,
                                    const WeightSample& policy);

// Threshold = empirical `quantile` of scores on a fresh holdout of
// training-distribution environments (holdout_size >= 100).
BaselineCalibration baseline_calibrate(ScoreKind kind, const BenchmarkSpec& spec,
                                       const EnvDistributionParams& training_params,
                                       const WeightSample& policy,
                                       std::size_t holdout_size, double quantile,
                                       std::uint64_t seed);

// Dataset-level rule: OOD iff the mean test score strictly exceeds the
// threshold.
bool baseline_detect(const BaselineCalibration& calibration,
                     const std::vector<double>& test_scores);

}  // namespace boundwatch
