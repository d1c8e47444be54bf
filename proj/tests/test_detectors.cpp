#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "boundwatch/detectors.hpp"
#include "boundwatch/rng.hpp"
#include "boundwatch/training.hpp"

using namespace boundwatch;

namespace {

const DiagonalGaussian kG = DiagonalGaussian::standard(2);

Certificate make_cert(double empirical, double d2, std::uint64_t m,
                      double delta) {
  return build_certificate(empirical, d2, m, delta, 1, kG, kG);
}

// Certificate with prescribed bounds, for pinning detector arithmetic to
// hand-computed values.
Certificate synthetic_cert(double empirical, double upper, double lower) {
  Certificate cert = make_cert(empirical, 0.0, 100, 0.05);
  cert.upper_bound = upper;
  cert.lower_bound = lower;
  return cert;
}

}  // namespace

TEST_CASE("hypothesis detector arithmetic") {
  SUBCASE("test cost within bounds is never OOD") {
    const Certificate cert = synthetic_cert(0.3, 0.4, 0.2);
    const DetectionVerdict v = detect_hypothesis(0.35, 10, cert, 0.05, 0.05);
    CHECK(v.hypothesis->tau_upper == 0.0);
    CHECK(v.hypothesis->p_bound_ood == 1.0);
    CHECK(v.verdict == Verdict::Unknown);
  }

  SUBCASE("clear exceedance rejects toward OOD") {
    // tau = 0.5, p = exp(-2*10*0.25) = exp(-5) ~ 0.00674
    const Certificate cert = synthetic_cert(0.05, 0.1, 0.0);
    const DetectionVerdict v = detect_hypothesis(0.6, 10, cert, 0.05, 0.05);
    CHECK(v.hypothesis->tau_upper == doctest::Approx(0.5));
    CHECK(v.hypothesis->p_bound_ood == doctest::Approx(std::exp(-5.0)).epsilon(1e-12));
    CHECK(v.hypothesis->p_bound_ood <= 0.05);
    CHECK(v.verdict == Verdict::OOD);
  }

  SUBCASE("clear shortfall rejects toward WD") {
    // tau_lower = 0.4, p = exp(-2*10*0.16) = exp(-3.2) ~ 0.0408
    const Certificate cert = synthetic_cert(0.45, 0.5, 0.4);
    const DetectionVerdict v = detect_hypothesis(0.0, 10, cert, 0.05, 0.05);
    CHECK(v.hypothesis->tau_lower == doctest::Approx(0.4));
    CHECK(v.hypothesis->p_bound_wd ==
          doctest::Approx(std::exp(-3.2)).epsilon(1e-12));
    CHECK(v.verdict == Verdict::WD);
  }

  SUBCASE("preconditions") {
    const Certificate cert = synthetic_cert(0.3, 0.4, 0.2);
    CHECK_THROWS_AS(detect_hypothesis(1.5, 10, cert, 0.05, 0.05),
                    std::invalid_argument);
    CHECK_THROWS_AS(detect_hypothesis(0.5, 0, cert, 0.05, 0.05),
                    std::invalid_argument);
    CHECK_THROWS_AS(detect_hypothesis(0.5, 10, cert, 0.0, 0.05),
                    std::invalid_argument);
    CHECK_THROWS_AS(detect_hypothesis(0.5, 10, cert, 0.05, 1.0),
                    std::invalid_argument);
    const Certificate other = synthetic_cert(0.9, 1.0, 0.8);
    CHECK_THROWS_AS(detect_hypothesis(0.5, 10, cert, other, 0.05, 0.05),
                    std::invalid_argument);
  }
}

TEST_CASE("confidence-interval detector arithmetic") {
  SUBCASE("gamma formula") {
    // n=10, delta'=0.05 -> sqrt(ln(20)/20)
    const Certificate cert = synthetic_cert(0.05, 0.1, 0.0);
    const DetectionVerdict v =
        detect_confidence_interval(0.9, 10, cert, 0.01, 0.05, 0.01, 0.05);
    CHECK(v.interval->gamma_ood ==
          doctest::Approx(std::sqrt(std::log(20.0) / 20.0)).epsilon(1e-12));
    CHECK(v.interval->gamma_ood == doctest::Approx(0.38704).epsilon(1e-4));
    // delta_c_ood = 0.9 - 0.38704 - 0.1 = 0.41296 > 0 -> OOD
    CHECK(v.interval->delta_c_ood == doctest::Approx(0.41296).epsilon(1e-4));
    CHECK(v.verdict == Verdict::OOD);
  }

  SUBCASE("test cost at the empirical cost can never be OOD") {
    const Certificate cert = make_cert(0.5, 0.3, 200, 0.05);
    const DetectionVerdict v = detect_confidence_interval(
        cert.empirical_cost, 10, cert, 0.01, 0.04, 0.01, 0.04);
    CHECK(v.interval->delta_c_ood < 0.0);
    CHECK(v.verdict != Verdict::OOD);
  }

  SUBCASE("WD fires on a clear shortfall") {
    const Certificate cert = synthetic_cert(0.85, 0.9, 0.8);
    const DetectionVerdict v =
        detect_confidence_interval(0.05, 20, cert, 0.01, 0.04, 0.01, 0.04);
    // gamma_wd = sqrt(ln(25)/40) ~ 0.2837; dCw = 0.8 - 0.05 - 0.2837 > 0
    CHECK(v.interval->delta_c_wd > 0.0);
    CHECK(v.verdict == Verdict::WD);
  }

  SUBCASE("preconditions") {
    const Certificate cert = synthetic_cert(0.3, 0.4, 0.2);
    CHECK_THROWS_AS(
        detect_confidence_interval(0.5, 10, cert, 0.5, 0.5, 0.01, 0.04),
        std::invalid_argument);
    CHECK_THROWS_AS(
        detect_confidence_interval(0.5, 10, cert, 0.01, 0.04, 0.6, 0.4),
        std::invalid_argument);
    CHECK_NOTHROW(
        detect_confidence_interval(0.5, 10, cert, 0.5, 0.49, 0.01, 0.04));
  }
}

TEST_CASE("verdict monotonicity in the test cost") {
  const Certificate cert = make_cert(0.4, 0.5, 400, 0.05);
  double prev_dco = -std::numeric_limits<double>::infinity();
  double prev_dcw = std::numeric_limits<double>::infinity();
  bool seen_ood = false;
  for (double cost = 0.0; cost <= 1.0; cost += 0.01) {
    const DetectionVerdict v =
        detect_confidence_interval(cost, 50, cert, 0.01, 0.09, 0.01, 0.09);
    CHECK(v.interval->delta_c_ood >= prev_dco);
    CHECK(v.interval->delta_c_wd <= prev_dcw);
    prev_dco = v.interval->delta_c_ood;
    prev_dcw = v.interval->delta_c_wd;
    // once OOD, higher test costs stay OOD
    if (seen_ood) CHECK(v.verdict == Verdict::OOD);
    seen_ood = seen_ood || v.verdict == Verdict::OOD;
  }
}

TEST_CASE("consistency fuzz: the detectors never declare OOD and WD at once") {
  Rng rng(0x900d);
  const int reps = 200000;  // full-scale run lives in the acceptance suite
  for (int rep = 0; rep < reps; ++rep) {
    const double empirical = rng.uniform01();
    const double d2 = rng.uniform(0.0, 50.0);
    const std::uint64_t m = 8 + rng.uniform_index(100000);
    const double delta_u = rng.uniform(1e-6, 1.0 - 1e-6);
    const double delta_l = rng.uniform(1e-6, 1.0 - 1e-6);
    const Certificate cu = make_cert(empirical, d2, m, delta_u);
    const Certificate cl = make_cert(empirical, d2, m, delta_l);
    const double test_cost = rng.uniform01();
    const std::uint64_t n = 1 + rng.uniform_index(10000);

    const double alpha_o = rng.uniform(1e-6, 1.0 - 1e-6);
    const double alpha_w = rng.uniform(1e-6, 1.0 - 1e-6);
    // detect_* throws std::logic_error if both conditions fire
    const DetectionVerdict ht =
        detect_hypothesis(test_cost, n, cu, cl, alpha_o, alpha_w);
    CHECK(!(ht.hypothesis->p_bound_ood < 1.0 && ht.hypothesis->p_bound_wd < 1.0));

    const double sum_o = rng.uniform(1e-5, 1.0 - 1e-5);
    const double sum_w = rng.uniform(1e-5, 1.0 - 1e-5);
    const double d_o = sum_o * rng.uniform(0.1, 0.9);
    const double d_w = sum_w * rng.uniform(0.1, 0.9);
    const DetectionVerdict ci = detect_confidence_interval(
        test_cost, n, cu, cl, d_o, sum_o - d_o, d_w, sum_w - d_w);
    if (ci.interval->delta_c_ood > 0.0) CHECK(ci.interval->delta_c_wd < 0.0);
  }
}

TEST_CASE("verdict line and json") {
  const Certificate cert = synthetic_cert(0.05, 0.1, 0.0);
  const DetectionVerdict ood = detect_hypothesis(0.6, 10, cert, 0.05, 0.05);
  const std::string line = verdict_line(ood);
  CHECK(line.substr(0, 3) == "OOD");
  CHECK(line.find("p_ood=") != std::string::npos);
  CHECK(line.find("p_wd=") != std::string::npos);

  const DetectionVerdict ci =
      detect_confidence_interval(0.9, 10, cert, 0.01, 0.05, 0.01, 0.05);
  const std::string ci_line = verdict_line(ci);
  CHECK(ci_line.find("dCo=") != std::string::npos);
  CHECK(ci_line.find("dCw=") != std::string::npos);

  const std::string json = to_json(ci);
  CHECK(json.find("\"verdict\":\"OOD\"") != std::string::npos);
  CHECK(json.find("certificate_id") != std::string::npos);
  CHECK(json.find("delta_o") != std::string::npos);
}

TEST_CASE("baseline scores") {
  // two logits, the first dominant: msp score small, maxlogit score = -max
  const std::vector<double> confident{5.0, -5.0};
  CHECK(baseline_score(ScoreKind::MSP, confident) ==
        doctest::Approx(1.0 - 1.0 / (1.0 + std::exp(-10.0))).epsilon(1e-12));
  CHECK(baseline_score(ScoreKind::MaxLogit, confident) == -5.0);

  const std::vector<double> flat{1.0, 1.0, 1.0, 1.0};
  CHECK(baseline_score(ScoreKind::MSP, flat) == doctest::Approx(0.75));
  CHECK_THROWS_AS(baseline_score(ScoreKind::MSP, {}), std::invalid_argument);
}

TEST_CASE("baseline calibration quantiles and detection rule") {
  BenchmarkSpec spec;
  spec.family = Family::PrimitiveNav;
  PrimitiveNavDist params;
  WeightSample policy;
  policy.weights.assign(policy_dim(spec), 0.0);
  Rng wrng(3);
  for (auto& w : policy.weights) w = 0.3 * wrng.normal();

  const BaselineCalibration max_cal = baseline_calibrate(
      ScoreKind::MSP, spec, params, policy, 500, 1.0, 0xcafe);
  // quantile 1.0 -> threshold is the maximum: fresh training data almost
  // never exceeds it
  const EnvironmentDataset fresh = sample_dataset(params, 1000, 0xf00);
  const std::vector<double> scores =
      baseline_scores(ScoreKind::MSP, spec, fresh, policy);
  int above = 0;
  for (double s : scores)
    if (s > max_cal.threshold) ++above;
  CHECK(above <= 20);

  const BaselineCalibration med_cal = baseline_calibrate(
      ScoreKind::MSP, spec, params, policy, 2000, 0.5, 0xcafe);
  int above_med = 0;
  for (double s : scores)
    if (s > med_cal.threshold) ++above_med;
  // ~50% of fresh training environments exceed the median threshold
  CHECK(above_med > 400);
  CHECK(above_med < 600);

  CHECK(baseline_detect(med_cal, {med_cal.threshold - 0.1}) == false);
  CHECK(baseline_detect(med_cal, {med_cal.threshold + 0.1}) == true);
  // tie breaks toward not-OOD (strict inequality)
  CHECK(baseline_detect(med_cal, {med_cal.threshold}) == false);
  CHECK_THROWS_AS(baseline_detect(med_cal, {}), std::invalid_argument);
  CHECK_THROWS_AS(
      baseline_calibrate(ScoreKind::MSP, spec, params, policy, 50, 0.5, 1),
      std::invalid_argument);
}

TEST_CASE("nuisance-shifted scores stochastically dominate training scores") {
  BenchmarkSpec spec;
  spec.family = Family::PrimitiveNav;
  PrimitiveNavDist params;
  // the policy the sweeps actually run: a clearance-fitted prior mean
  const EnvironmentDataset prior_data = sample_dataset(params, 400, 0x11);
  WeightSample policy;
  policy.weights = fit_nav_prior(spec, prior_data, 0.1, 1e-3, -4.0).mean;

  const EnvironmentDataset clean = sample_dataset(params, 800, 1);
  const EnvironmentDataset shifted =
      sample_dataset(nuisance_shift(params), 800, 2);
  for (ScoreKind kind : {ScoreKind::MSP, ScoreKind::MaxLogit}) {
    const std::vector<double> a = baseline_scores(kind, spec, clean, policy);
    const std::vector<double> b = baseline_scores(kind, spec, shifted, policy);
    // Mann-Whitney direction: P(shifted > clean) should exceed 1/2
    std::size_t wins = 0, total = 0;
    for (std::size_t i = 0; i < b.size(); i += 7)
      for (std::size_t j = 0; j < a.size(); j += 7) {
        wins += b[i] > a[j] ? 1 : 0;
        ++total;
      }
    CAPTURE(kind == ScoreKind::MSP);
    CHECK(static_cast<double>(wins) / static_cast<double>(total) > 0.5);
  }
}
