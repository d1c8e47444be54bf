#include "boundwatch/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "boundwatch/format.hpp"
#include "boundwatch/kernels.hpp"

namespace boundwatch {

namespace {

void check_common(double test_cost, std::uint64_t n, const Certificate& upper,
                  const Certificate& lower) {
  if (!(test_cost >= 0.0 && test_cost <= 1.0))
    throw std::invalid_argument("detect: test cost must be in [0,1]");
  if (n == 0) throw std::invalid_argument("detect: n must be >= 1");
  // Both bounds must describe the same policy and training set, or the
  // mutual-exclusion argument between the two declarations breaks down.
  if (upper.empirical_cost != lower.empirical_cost || upper.m != lower.m)
    throw std::invalid_argument(
        "detect: upper/lower certificates disagree on the training run");
}

void check_exclusive(bool ood, bool wd) {
  if (ood && wd)
    throw std::logic_error(
        "detector inconsistency: OOD and WD fired simultaneously");
}

double require_rate(double v, const char* name) {
  if (!(v > 0.0 && v < 1.0))
    throw std::invalid_argument(std::string("detect: ") + name +
                                " must be in (0,1)");
  return v;
}

}  // namespace

std::string verdict_name(Verdict v) {
  switch (v) {
    case Verdict::OOD: return "OOD";
    case Verdict::WD: return "WD";
    case Verdict::Unknown: return "UNKNOWN";
  }
  return "UNKNOWN";
}

DetectionVerdict detect_hypothesis(double test_cost, std::uint64_t n,
                                   const Certificate& cert_upper,
                                   const Certificate& cert_lower,
                                   double alpha_ood, double alpha_wd) {
  check_common(test_cost, n, cert_upper, cert_lower);
  require_rate(alpha_ood, "alpha_ood");
  require_rate(alpha_wd, "alpha_wd");

  HypothesisIndicators ind;
  ind.alpha_ood = alpha_ood;
  ind.alpha_wd = alpha_wd;
  ind.tau_upper = std::max(test_cost - cert_upper.upper_bound, 0.0);
  ind.tau_lower = std::max(cert_lower.lower_bound - test_cost, 0.0);
  const double nd = static_cast<double>(n);
  ind.p_bound_ood = std::exp(-2.0 * nd * ind.tau_upper * ind.tau_upper);
  ind.p_bound_wd = std::exp(-2.0 * nd * ind.tau_lower * ind.tau_lower);

  const bool ood = ind.p_bound_ood <= alpha_ood;
  const bool wd = ind.p_bound_wd <= alpha_wd;
  check_exclusive(ood, wd);

  DetectionVerdict v;
  v.verdict = ood ? Verdict::OOD : (wd ? Verdict::WD : Verdict::Unknown);
  v.test_cost = test_cost;
  v.n = n;
  v.certificate_id = cert_upper.id();
  v.hypothesis = ind;
  return v;
}

DetectionVerdict detect_hypothesis(double test_cost, std::uint64_t n,
                                   const Certificate& cert, double alpha_ood,
                                   double alpha_wd) {
  return detect_hypothesis(test_cost, n, cert, cert, alpha_ood, alpha_wd);
}

DetectionVerdict detect_confidence_interval(double test_cost, std::uint64_t n,
                                            const Certificate& cert_upper,
                                            const Certificate& cert_lower,
                                            double delta_o, double delta_o_prime,
                                            double delta_w,
                                            double delta_w_prime) {
  check_common(test_cost, n, cert_upper, cert_lower);
  require_rate(delta_o, "delta_o");
  require_rate(delta_o_prime, "delta_o_prime");
  require_rate(delta_w, "delta_w");
  require_rate(delta_w_prime, "delta_w_prime");
  if (delta_o + delta_o_prime >= 1.0)
    throw std::invalid_argument("detect: delta_o + delta_o_prime must be < 1");
  if (delta_w + delta_w_prime >= 1.0)
    throw std::invalid_argument("detect: delta_w + delta_w_prime must be < 1");

  IntervalIndicators ind;
  ind.delta_o = delta_o;
  ind.delta_o_prime = delta_o_prime;
  ind.delta_w = delta_w;
  ind.delta_w_prime = delta_w_prime;
  const double nd = static_cast<double>(n);
  ind.gamma_ood = std::sqrt(std::log(1.0 / delta_o_prime) / (2.0 * nd));
  ind.gamma_wd = std::sqrt(std::log(1.0 / delta_w_prime) / (2.0 * nd));
  ind.delta_c_ood = test_cost - ind.gamma_ood - cert_upper.upper_bound;
  ind.delta_c_wd = cert_lower.lower_bound - test_cost - ind.gamma_wd;

  const bool ood = ind.delta_c_ood > 0.0;
  const bool wd = ind.delta_c_wd >= 0.0;
  check_exclusive(ood, wd);

  DetectionVerdict v;
  v.verdict = ood ? Verdict::OOD : (wd ? Verdict::WD : Verdict::Unknown);
  v.test_cost = test_cost;
  v.n = n;
  v.certificate_id = cert_upper.id();
  v.interval = ind;
  return v;
}

DetectionVerdict detect_confidence_interval(double test_cost, std::uint64_t n,
                                            const Certificate& cert,
                                            double delta_o, double delta_o_prime,
                                            double delta_w,
                                            double delta_w_prime) {
  return detect_confidence_interval(test_cost, n, cert, cert, delta_o,
                                    delta_o_prime, delta_w, delta_w_prime);
}

std::string verdict_line(const DetectionVerdict& v) {
  std::string line = verdict_name(v.verdict);
  if (v.hypothesis) {
    line += " p_ood=" + fmt_double(v.hypothesis->p_bound_ood);
    line += " p_wd=" + fmt_double(v.hypothesis->p_bound_wd);
  }
  if (v.interval) {
    line += " dCo=" + fmt_double(v.interval->delta_c_ood);
    line += " dCw=" + fmt_double(v.interval->delta_c_wd);
  }
  return line;
}

std::string to_json(const DetectionVerdict& v) {
  nlohmann::json j;
  j["verdict"] = verdict_name(v.verdict);
  j["test_cost"] = v.test_cost;
  j["n"] = v.n;
  j["certificate_id"] = v.certificate_id;
  if (v.hypothesis) {
    const auto& h = *v.hypothesis;
    j["method"] = "ht";
    j["indicators"] = {{"tau_upper", h.tau_upper},
                       {"tau_lower", h.tau_lower},
                       {"p_bound_ood", h.p_bound_ood},
                       {"p_bound_wd", h.p_bound_wd}};
    j["rates"] = {{"alpha_ood", h.alpha_ood}, {"alpha_wd", h.alpha_wd}};
  }
  if (v.interval) {
    const auto& c = *v.interval;
    j["method"] = v.hypothesis ? "ht+ci" : "ci";
    j["indicators_ci"] = {{"gamma_ood", c.gamma_ood},
                          {"gamma_wd", c.gamma_wd},
                          {"delta_c_ood", c.delta_c_ood},
                          {"delta_c_wd", c.delta_c_wd}};
    j["rates_ci"] = {{"delta_o", c.delta_o},
                     {"delta_o_prime", c.delta_o_prime},
                     {"delta_w", c.delta_w},
                     {"delta_w_prime", c.delta_w_prime}};
  }
  return j.dump();
}

double baseline_score(ScoreKind kind, const std::vector<double>& logits) {
  if (logits.empty())
    throw std::invalid_argument("baseline_score: empty logit vector");
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  if (kind == ScoreKind::MaxLogit) return -max_logit;
  double z = 0.0;
  for (double l : logits) z += std::exp(l - max_logit);
  return 1.0 - 1.0 / z;  // 1 - max softmax probability
}

std::vector<double> baseline_scores(ScoreKind kind, const BenchmarkSpec& spec,
                                    const EnvironmentDataset& dataset,
                                    const WeightSample& policy) {
  if (spec.family != Family::PrimitiveNav)
    throw std::invalid_argument(
        "baseline_scores: family has no categorical policy head");
  const PreparedDataset prepared(spec, dataset);
  std::vector<double> scores(prepared.size());
  for (std::size_t i = 0; i < prepared.size(); ++i)
    scores[i] = baseline_score(kind, prepared.episode(i, policy).score_vector);
  return scores;
}

BaselineCalibration baseline_calibrate(ScoreKind kind, const BenchmarkSpec& spec,
                                       const EnvDistributionParams& training_params,
                                       const WeightSample& policy,
                                       std::size_t holdout_size, double quantile,
                                       std::uint64_t seed) {
  if (holdout_size < 100)
    throw std::invalid_argument("baseline_calibrate: holdout_size must be >= 100");
  if (!(quantile > 0.0 && quantile <= 1.0))
    throw std::invalid_argument("baseline_calibrate: quantile must be in (0,1]");
  const EnvironmentDataset holdout =
      sample_dataset(training_params, holdout_size, seed);
  std::vector<double> scores = baseline_scores(kind, spec, holdout, policy);
  std::sort(scores.begin(), scores.end());
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(quantile * static_cast<double>(scores.size())));
  if (rank < 1) rank = 1;
  if (rank > scores.size()) rank = scores.size();
  BaselineCalibration cal;
  cal.score_kind = kind;
  cal.calibration_quantile = quantile;
  cal.threshold = scores[rank - 1];
  return cal;
}

bool baseline_detect(const BaselineCalibration& calibration,
                     const std::vector<double>& test_scores) {
  if (test_scores.empty())
    throw std::invalid_argument("baseline_detect: empty score vector");
  const double mean =
      kernels::active().sum(test_scores.data(), test_scores.size()) /
      static_cast<double>(test_scores.size());
  return mean > calibration.threshold;
}

}  // namespace boundwatch
