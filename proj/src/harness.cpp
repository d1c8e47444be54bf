#include "boundwatch/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "boundwatch/format.hpp"
#include "boundwatch/kernels.hpp"
#include "boundwatch/threads.hpp"

namespace boundwatch {

namespace {

// Seed stream layout under the master seed. Every consumer gets its own
// stream; parallel workers only ever see pre-derived seeds.
enum SeedStream : std::uint64_t {
  kPriorData = 10,
  kTrainData = 11,
  kTrainSeed = 12,
  kPolicyDraw = 13,
  kBaselineHoldout = 14,
  kTrainOracle = 15,
  kCellOracle = 1000,    // + cell
  kCellTrial = 20000,    // + cell, trial
  kValTrainData = 50000, // + trial
  kValTrainSeed = 50001,
  kValPolicy = 50002,
  kValOracle = 50003,
  kValGapOracle = 50004,
  kValFpSet = 60000,     // + trial, j
  kValFnSet = 70000,
  kValGapSet = 80000,
};

RateReport make_rate(std::uint64_t count, std::uint64_t trials, double bound) {
  RateReport r;
  r.count = count;
  r.trials = trials;
  r.bound = bound;
  if (trials > 0) {
    r.rate = static_cast<double>(count) / static_cast<double>(trials);
    r.std_error =
        std::sqrt(r.rate * (1.0 - r.rate) / static_cast<double>(trials));
  }
  return r;
}

nlohmann::json rate_to_json(const RateReport& r) {
  return {{"count", r.count},
          {"trials", r.trials},
          {"rate", r.rate},
          {"std_error", r.std_error},
          {"bound", r.bound}};
}

RateReport rate_from_json(const nlohmann::json& j) {
  RateReport r;
  r.count = j.at("count").get<std::uint64_t>();
  r.trials = j.at("trials").get<std::uint64_t>();
  r.rate = j.at("rate").get<double>();
  r.std_error = j.at("std_error").get<double>();
  r.bound = j.at("bound").get<double>();
  return r;
}

void require_keys(const nlohmann::json& j,
                  std::initializer_list<const char*> allowed, const char* ctx) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw std::invalid_argument(std::string(ctx) + ": unknown key '" +
                                  item.key() + "'");
  }
}

// Paper convention for rate sums: the certificate side stays at 0.01 and the
// Hoeffding side absorbs the rest; tiny sums split evenly. Monotone in the
// sum componentwise.
std::pair<double, double> split_rate_sum(double sum) {
  if (!(sum > 0.0 && sum < 1.0))
    throw std::invalid_argument("rate sum must be in (0,1)");
  const double cert_side = std::min(0.01, sum / 2.0);
  return {cert_side, sum - cert_side};
}

Certificate cert_at_delta(const TrainedPipeline& pipe, std::uint64_t m,
                          double delta, std::uint64_t policy_seed) {
  return build_certificate(pipe.empirical_cost, pipe.d2, m, delta, policy_seed,
                           pipe.prior, pipe.posterior);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return kernels::active().sum(v.data(), v.size()) /
         static_cast<double>(v.size());
}

void write_file(const std::string& path, const std::string& body,
                std::vector<std::string>& files) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << body;
  files.push_back(path);
}

struct DetectorRow {
  const char* name;
  std::uint64_t ood, wd, unknown, not_ood;
  double indicator;
  bool ran;
};

std::vector<DetectorRow> cell_rows(const CellSummary& c) {
  return {
      {"ht", c.ht_ood, c.ht_wd, c.ht_unknown, 0, c.mean_one_minus_p_ood, true},
      {"ci", c.ci_ood, c.ci_wd, c.ci_unknown, 0, c.mean_delta_c_ood, true},
      {"msp", c.msp_ood, 0, 0, c.msp_not_ood, 0.0, c.baselines_ran},
      {"maxlogit", c.maxlogit_ood, 0, 0, c.maxlogit_not_ood, 0.0,
       c.baselines_ran},
  };
}

std::string sweep_csv(const SweepResult& sweep) {
  std::string out =
      "cell,detector,verdict,count,trials,fraction,std_error,gap,"
      "gap_std_error,mean_indicator,n\n";
  for (const auto& cell : sweep.cells) {
    for (const auto& row : cell_rows(cell)) {
      const std::uint64_t trials = row.ran ? cell.trials : 0;
      const std::pair<const char*, std::uint64_t> verdicts[4] = {
          {"ood", row.ood},
          {"wd", row.wd},
          {"unknown", row.unknown},
          {"not_ood", row.not_ood}};
      for (const auto& [verdict, count] : verdicts) {
        const RateReport r = make_rate(count, trials, 0.0);
        out += fmt_u64(cell.cell_index);
        out += ',';
        out += row.name;
        out += ',';
        out += verdict;
        out += ',';
        out += fmt_u64(count);
        out += ',';
        out += fmt_u64(trials);
        out += ',';
        out += fmt_double(r.rate);
        out += ',';
        out += fmt_double(r.std_error);
        out += ',';
        out += fmt_double(cell.gap);
        out += ',';
        out += fmt_double(cell.gap_std_error);
        out += ',';
        out += fmt_double(row.indicator);
        out += ',';
        out += fmt_u64(cell.n);
        out += '\n';
      }
    }
  }
  return out;
}

std::string sweep_plotdata_csv(const SweepResult& sweep) {
  std::string out = "gap,detector,verdict,fraction\n";
  for (const auto& cell : sweep.cells) {
    for (const auto& row : cell_rows(cell)) {
      if (!row.ran) continue;
      const std::pair<const char*, std::uint64_t> verdicts[4] = {
          {"ood", row.ood},
          {"wd", row.wd},
          {"unknown", row.unknown},
          {"not_ood", row.not_ood}};
      for (const auto& [verdict, count] : verdicts) {
        out += fmt_double(cell.gap);
        out += ',';
        out += row.name;
        out += ',';
        out += verdict;
        out += ',';
        out += fmt_double(cell.trials ? static_cast<double>(count) /
                                            static_cast<double>(cell.trials)
                                      : 0.0);
        out += '\n';
      }
    }
  }
  return out;
}

std::string rates_csv(const RateTuningReport& report) {
  std::string out =
      "fp_sum,fn_sum,cell,gap,ood,wd,unknown,trials,ood_fraction,"
      "wd_fraction,unknown_fraction\n";
  for (const auto& c : report.cells) {
    const double t = c.trials ? static_cast<double>(c.trials) : 1.0;
    out += fmt_double(c.fp_sum);
    out += ',';
    out += fmt_double(c.fn_sum);
    out += ',';
    out += fmt_u64(c.cell_index);
    out += ',';
    out += fmt_double(c.gap);
    out += ',';
    out += fmt_u64(c.ood);
    out += ',';
    out += fmt_u64(c.wd);
    out += ',';
    out += fmt_u64(c.unknown);
    out += ',';
    out += fmt_u64(c.trials);
    out += ',';
    out += fmt_double(static_cast<double>(c.ood) / t);
    out += ',';
    out += fmt_double(static_cast<double>(c.wd) / t);
    out += ',';
    out += fmt_double(static_cast<double>(c.unknown) / t);
    out += '\n';
  }
  return out;
}

}  // namespace

void DetectorRates::validate() const {
  for (double v : {alpha_ood, alpha_wd, delta_o, delta_o_prime, delta_w,
                   delta_w_prime})
    if (!(v > 0.0 && v < 1.0))
      throw std::invalid_argument("DetectorRates: every rate must be in (0,1)");
  if (delta_o + delta_o_prime >= 1.0 || delta_w + delta_w_prime >= 1.0)
    throw std::invalid_argument("DetectorRates: rate sums must be < 1");
}

void ExperimentConfig::validate() const {
  train.validate();
  rates.validate();
  if (m < 8) throw std::invalid_argument("config: m must be >= 8");
  if (n < 1) throw std::invalid_argument("config: n must be >= 1");
  if (trials_per_cell < 1)
    throw std::invalid_argument("config: trials_per_cell must be >= 1");
  if (!(baseline_quantile > 0.0 && baseline_quantile <= 1.0))
    throw std::invalid_argument("config: baseline_quantile must be in (0,1]");
  if (!(gap_confidence > 0.0 && gap_confidence < 1.0))
    throw std::invalid_argument("config: gap_confidence must be in (0,1)");
  for (const auto& [fp, fn] : rate_grid) {
    if (!(fp > 0.0 && fp < 1.0 && fn > 0.0 && fn < 1.0))
      throw std::invalid_argument("config: rate_grid sums must be in (0,1)");
  }
}

std::string ExperimentConfig::resolved_run_id() const {
  if (!run_id.empty()) return run_id;
  std::ostringstream os;
  os << "run_" << std::hex << master_seed;
  return os.str();
}

TrainedPipeline run_training_pipeline(const ExperimentConfig& config) {
  config.validate();
  TrainedPipeline pipe;

  if (config.benchmark.family == Family::PrimitiveNav) {
    const EnvironmentDataset prior_data =
        sample_dataset(config.train_params, config.prior.fit_dataset_size,
                       derive_seed(config.master_seed, kPriorData));
    pipe.prior = fit_nav_prior(config.benchmark, prior_data,
                               config.prior.fit_temperature,
                               config.prior.fit_ridge,
                               config.prior.log_variance,
                               config.prior.fit_scale);
  } else {
    pipe.prior = DiagonalGaussian::standard(policy_dim(config.benchmark));
    for (auto& lv : pipe.prior.log_variance) lv = config.prior.log_variance;
  }

  const EnvironmentDataset train_data =
      sample_dataset(config.train_params, config.m,
                     derive_seed(config.master_seed, kTrainData));
  TrainConfig tc = config.train;
  tc.seed = derive_seed(config.master_seed, kTrainSeed);
  TrainResult trained = train(pipe.prior, train_data, config.benchmark, tc);
  pipe.posterior = std::move(trained.posterior);
  pipe.trace = std::move(trained.trace);

  const std::uint64_t policy_seed = derive_seed(config.master_seed, kPolicyDraw);
  pipe.policy = finalize_policy(pipe.posterior, policy_seed);
  pipe.d2 = renyi2_divergence(pipe.posterior, pipe.prior);
  pipe.empirical_cost =
      PreparedDataset(config.benchmark, train_data).mean_cost(pipe.policy);
  pipe.certificate =
      build_certificate(pipe.empirical_cost, pipe.d2, config.m,
                        config.train.delta, policy_seed, pipe.prior,
                        pipe.posterior);
  return pipe;
}

ValidationReport run_guarantee_validation(const ExperimentConfig& config) {
  config.validate();
  if (config.trials_per_cell < 2000)
    throw std::invalid_argument(
        "run_guarantee_validation: needs trials_per_cell >= 2000");
  if (!config.validation_ood_params)
    throw std::invalid_argument(
        "run_guarantee_validation: validation_ood_params is required");
  const EnvDistributionParams& ood_params = *config.validation_ood_params;
  const double gap_alpha = 1.0 - config.gap_confidence;
  const auto [gap_delta_o, gap_delta_o_prime] = split_rate_sum(gap_alpha);

  const std::uint64_t trials = config.trials_per_cell;
  struct TrialOutcome {
    bool upper_violation = false;
    bool lower_violation = false;
    std::uint32_t fp_ci = 0, fp_ht = 0, fn_ci = 0, fn_ht = 0, gap_valid = 0;
  };
  std::vector<TrialOutcome> outcomes(trials);

  // Base prior is shared across trials: it is data-independent by construction.
  const DiagonalGaussian base_prior = [&] {
    if (config.benchmark.family == Family::PrimitiveNav) {
      const EnvironmentDataset prior_data =
          sample_dataset(config.train_params, config.prior.fit_dataset_size,
                         derive_seed(config.master_seed, kPriorData));
      return fit_nav_prior(config.benchmark, prior_data,
                           config.prior.fit_temperature, config.prior.fit_ridge,
                           config.prior.log_variance, config.prior.fit_scale);
    }
    DiagonalGaussian g = DiagonalGaussian::standard(policy_dim(config.benchmark));
    for (auto& lv : g.log_variance) lv = config.prior.log_variance;
    return g;
  }();

  parallel_for(trials, [&](std::size_t t) {
    const EnvironmentDataset S =
        sample_dataset(config.train_params, config.m,
                       derive_seed(config.master_seed, kValTrainData, t));
    TrainConfig tc = config.train;
    tc.seed = derive_seed(config.master_seed, kValTrainSeed, t);
    const TrainResult trained = train(base_prior, S, config.benchmark, tc);
    const std::uint64_t policy_seed =
        derive_seed(config.master_seed, kValPolicy, t);
    const WeightSample policy = finalize_policy(trained.posterior, policy_seed);
    const double d2 = renyi2_divergence(trained.posterior, base_prior);
    const double empirical =
        PreparedDataset(config.benchmark, S).mean_cost(policy);
    const Certificate cert =
        build_certificate(empirical, d2, config.m, config.train.delta,
                          policy_seed, base_prior, trained.posterior);

    const OracleEstimate truth = expected_cost_oracle(
        config.benchmark, config.train_params, policy, config.oracle_samples,
        derive_seed(config.master_seed, kValOracle, t));
    TrialOutcome& out = outcomes[t];
    out.upper_violation = truth.estimate > cert.upper_bound;
    out.lower_violation = truth.estimate < cert.lower_bound;

    const Certificate cert_o =
        build_certificate(empirical, d2, config.m, config.rates.delta_o,
                          policy_seed, base_prior, trained.posterior);
    const Certificate cert_w =
        build_certificate(empirical, d2, config.m, config.rates.delta_w,
                          policy_seed, base_prior, trained.posterior);
    const Certificate cert_gap =
        build_certificate(empirical, d2, config.m, gap_delta_o, policy_seed,
                          base_prior, trained.posterior);

    for (std::uint64_t j = 0; j < config.fp_sets_per_trial; ++j) {
      const EnvironmentDataset sp =
          sample_dataset(config.train_params, config.n,
                         derive_seed(config.master_seed, kValFpSet + j, t));
      const double test_cost =
          dataset_cost(config.benchmark, sp, policy);
      if (detect_confidence_interval(test_cost, config.n, cert_o, cert_w,
                                     config.rates.delta_o,
                                     config.rates.delta_o_prime,
                                     config.rates.delta_w,
                                     config.rates.delta_w_prime)
              .verdict == Verdict::OOD)
        ++out.fp_ci;
      if (detect_hypothesis(test_cost, config.n, cert_o, cert_w,
                            config.rates.alpha_ood, config.rates.alpha_wd)
              .verdict == Verdict::OOD)
        ++out.fp_ht;
    }
    for (std::uint64_t j = 0; j < config.fn_sets_per_trial; ++j) {
      const EnvironmentDataset sp =
          sample_dataset(ood_params, config.n,
                         derive_seed(config.master_seed, kValFnSet + j, t));
      const double test_cost = dataset_cost(config.benchmark, sp, policy);
      if (detect_confidence_interval(test_cost, config.n, cert_o, cert_w,
                                     config.rates.delta_o,
                                     config.rates.delta_o_prime,
                                     config.rates.delta_w,
                                     config.rates.delta_w_prime)
              .verdict == Verdict::WD)
        ++out.fn_ci;
      if (detect_hypothesis(test_cost, config.n, cert_o, cert_w,
                            config.rates.alpha_ood, config.rates.alpha_wd)
              .verdict == Verdict::WD)
        ++out.fn_ht;
    }

    if (config.gap_sets_per_trial > 0) {
      const OracleEstimate ood_truth = expected_cost_oracle(
          config.benchmark, ood_params, policy, config.gap_oracle_samples,
          derive_seed(config.master_seed, kValGapOracle, t));
      const double true_gap = ood_truth.estimate - truth.estimate;
      for (std::uint64_t j = 0; j < config.gap_sets_per_trial; ++j) {
        const EnvironmentDataset sp =
            sample_dataset(ood_params, config.n,
                           derive_seed(config.master_seed, kValGapSet + j, t));
        const double test_cost = dataset_cost(config.benchmark, sp, policy);
        const DetectionVerdict v = detect_confidence_interval(
            test_cost, config.n, cert_gap, cert_gap, gap_delta_o,
            gap_delta_o_prime, gap_delta_o, gap_delta_o_prime);
        if (v.interval->delta_c_ood <= true_gap) ++out.gap_valid;
      }
    }
  });

  std::uint64_t upper = 0, lower = 0, fp_ci = 0, fp_ht = 0, fn_ci = 0,
                fn_ht = 0, gap_valid = 0;
  for (const auto& o : outcomes) {
    upper += o.upper_violation ? 1 : 0;
    lower += o.lower_violation ? 1 : 0;
    fp_ci += o.fp_ci;
    fp_ht += o.fp_ht;
    fn_ci += o.fn_ci;
    fn_ht += o.fn_ht;
    gap_valid += o.gap_valid;
  }

  ValidationReport report;
  report.trials = trials;
  report.upper_violation = make_rate(upper, trials, config.train.delta);
  report.lower_violation = make_rate(lower, trials, config.train.delta);
  const std::uint64_t fp_total = trials * config.fp_sets_per_trial;
  const std::uint64_t fn_total = trials * config.fn_sets_per_trial;
  const std::uint64_t gap_total = trials * config.gap_sets_per_trial;
  report.fp_ci = make_rate(fp_ci, fp_total,
                           config.rates.delta_o + config.rates.delta_o_prime);
  report.fp_ht = make_rate(fp_ht, fp_total, config.rates.alpha_ood);
  report.fn_ci = make_rate(fn_ci, fn_total,
                           config.rates.delta_w + config.rates.delta_w_prime);
  report.fn_ht = make_rate(fn_ht, fn_total, config.rates.alpha_wd);
  report.gap_validity = make_rate(gap_valid, gap_total, config.gap_confidence);
  return report;
}

std::string to_json(const ValidationReport& report) {
  nlohmann::json j;
  j["schema"] = "validation_v1";
  j["trials"] = report.trials;
  j["upper_violation"] = rate_to_json(report.upper_violation);
  j["lower_violation"] = rate_to_json(report.lower_violation);
  j["fp_ci"] = rate_to_json(report.fp_ci);
  j["fp_ht"] = rate_to_json(report.fp_ht);
  j["fn_ci"] = rate_to_json(report.fn_ci);
  j["fn_ht"] = rate_to_json(report.fn_ht);
  j["gap_validity"] = rate_to_json(report.gap_validity);
  return j.dump(2);
}

namespace {

struct TrialRecord {
  Verdict ht = Verdict::Unknown;
  Verdict ci = Verdict::Unknown;
  bool msp_ood = false;
  bool maxlogit_ood = false;
  double test_cost = 0.0;
  double one_minus_p_ood = 0.0;
  double delta_c_ood = 0.0;
  double delta_c_wd = 0.0;
};

struct CellCosts {
  double gap = 0.0;
  double gap_std_error = 0.0;
  std::vector<double> test_costs;
};

// Per-(cell, trial) test costs plus the oracle gap; shared by the sweep and
// the rate-tuning study so both see identical datasets.
std::vector<CellCosts> collect_cell_costs(const ExperimentConfig& config,
                                          const TrainedPipeline& pipe) {
  const OracleEstimate oracle_train = expected_cost_oracle(
      config.benchmark, config.train_params, pipe.policy, config.oracle_samples,
      derive_seed(config.master_seed, kTrainOracle));

  std::vector<CellCosts> cells(config.test_param_grid.size());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const OracleEstimate oracle_cell = expected_cost_oracle(
        config.benchmark, config.test_param_grid[c], pipe.policy,
        config.oracle_samples, derive_seed(config.master_seed, kCellOracle + c));
    cells[c].gap = oracle_cell.estimate - oracle_train.estimate;
    cells[c].gap_std_error =
        std::sqrt(oracle_cell.std_error * oracle_cell.std_error +
                  oracle_train.std_error * oracle_train.std_error);
    cells[c].test_costs.resize(config.trials_per_cell);
    const auto& params = config.test_param_grid[c];
    parallel_for(config.trials_per_cell, [&, c](std::size_t t) {
      const EnvironmentDataset sp = sample_dataset(
          params, config.n, derive_seed(config.master_seed, kCellTrial + c, t));
      cells[c].test_costs[t] = dataset_cost(config.benchmark, sp, pipe.policy);
    });
  }
  return cells;
}

}  // namespace

SweepResult run_detection_sweep(const ExperimentConfig& config) {
  config.validate();
  if (config.test_param_grid.empty())
    throw std::invalid_argument("run_detection_sweep: empty test grid");

  const TrainedPipeline pipe = run_training_pipeline(config);
  const Certificate cert_o = cert_at_delta(pipe, config.m, config.rates.delta_o,
                                           pipe.certificate.policy_seed);
  const Certificate cert_w = cert_at_delta(pipe, config.m, config.rates.delta_w,
                                           pipe.certificate.policy_seed);

  const bool baselines = config.benchmark.family == Family::PrimitiveNav;
  BaselineCalibration msp_cal, maxlogit_cal;
  if (baselines) {
    const std::uint64_t holdout_seed =
        derive_seed(config.master_seed, kBaselineHoldout);
    msp_cal = baseline_calibrate(ScoreKind::MSP, config.benchmark,
                                 config.train_params, pipe.policy,
                                 config.baseline_holdout,
                                 config.baseline_quantile, holdout_seed);
    maxlogit_cal = baseline_calibrate(ScoreKind::MaxLogit, config.benchmark,
                                      config.train_params, pipe.policy,
                                      config.baseline_holdout,
                                      config.baseline_quantile, holdout_seed);
  }

  const OracleEstimate oracle_train = expected_cost_oracle(
      config.benchmark, config.train_params, pipe.policy, config.oracle_samples,
      derive_seed(config.master_seed, kTrainOracle));

  SweepResult result;
  result.n = config.n;
  result.trials_per_cell = config.trials_per_cell;
  result.certificate_id = pipe.certificate.id();
  result.cells.resize(config.test_param_grid.size());

  for (std::size_t c = 0; c < config.test_param_grid.size(); ++c) {
    const auto& params = config.test_param_grid[c];
    CellSummary& cell = result.cells[c];
    cell.cell_index = c;
    cell.params = params;
    cell.trials = config.trials_per_cell;
    cell.n = config.n;
    cell.baselines_ran = baselines;

    const OracleEstimate oracle_cell = expected_cost_oracle(
        config.benchmark, params, pipe.policy, config.oracle_samples,
        derive_seed(config.master_seed, kCellOracle + c));
    cell.gap = oracle_cell.estimate - oracle_train.estimate;
    cell.gap_std_error =
        std::sqrt(oracle_cell.std_error * oracle_cell.std_error +
                  oracle_train.std_error * oracle_train.std_error);

    std::vector<TrialRecord> records(config.trials_per_cell);
    parallel_for(config.trials_per_cell, [&, c](std::size_t t) {
      const EnvironmentDataset sp = sample_dataset(
          params, config.n, derive_seed(config.master_seed, kCellTrial + c, t));
      // one preparation per dataset serves the cost and both baseline scores
      const PreparedDataset prepared(config.benchmark, sp);
      TrialRecord& rec = records[t];
      std::vector<double> costs(prepared.size());
      std::vector<double> msp_scores, ml_scores;
      if (baselines) {
        msp_scores.resize(prepared.size());
        ml_scores.resize(prepared.size());
      }
      for (std::size_t e = 0; e < prepared.size(); ++e) {
        const EpisodeResult episode = prepared.episode(e, pipe.policy);
        costs[e] = episode.cost;
        if (baselines) {
          msp_scores[e] = baseline_score(ScoreKind::MSP, episode.score_vector);
          ml_scores[e] =
              baseline_score(ScoreKind::MaxLogit, episode.score_vector);
        }
      }
      rec.test_cost = mean_of(costs);
      const DetectionVerdict ht = detect_hypothesis(
          rec.test_cost, config.n, cert_o, cert_w, config.rates.alpha_ood,
          config.rates.alpha_wd);
      const DetectionVerdict ci = detect_confidence_interval(
          rec.test_cost, config.n, cert_o, cert_w, config.rates.delta_o,
          config.rates.delta_o_prime, config.rates.delta_w,
          config.rates.delta_w_prime);
      rec.ht = ht.verdict;
      rec.ci = ci.verdict;
      rec.one_minus_p_ood = 1.0 - ht.hypothesis->p_bound_ood;
      rec.delta_c_ood = ci.interval->delta_c_ood;
      rec.delta_c_wd = ci.interval->delta_c_wd;
      if (baselines) {
        rec.msp_ood = baseline_detect(msp_cal, msp_scores);
        rec.maxlogit_ood = baseline_detect(maxlogit_cal, ml_scores);
      }
    });

    std::vector<double> costs, ps, dcos, dcws;
    costs.reserve(records.size());
    ps.reserve(records.size());
    dcos.reserve(records.size());
    dcws.reserve(records.size());
    for (const auto& rec : records) {
      switch (rec.ht) {
        case Verdict::OOD: ++cell.ht_ood; break;
        case Verdict::WD: ++cell.ht_wd; break;
        case Verdict::Unknown: ++cell.ht_unknown; break;
      }
      switch (rec.ci) {
        case Verdict::OOD: ++cell.ci_ood; break;
        case Verdict::WD: ++cell.ci_wd; break;
        case Verdict::Unknown: ++cell.ci_unknown; break;
      }
      if (baselines) {
        (rec.msp_ood ? cell.msp_ood : cell.msp_not_ood) += 1;
        (rec.maxlogit_ood ? cell.maxlogit_ood : cell.maxlogit_not_ood) += 1;
      }
      costs.push_back(rec.test_cost);
      ps.push_back(rec.one_minus_p_ood);
      dcos.push_back(rec.delta_c_ood);
      dcws.push_back(rec.delta_c_wd);
    }
    cell.mean_test_cost = mean_of(costs);
    cell.mean_one_minus_p_ood = mean_of(ps);
    cell.mean_delta_c_ood = mean_of(dcos);
    cell.mean_delta_c_wd = mean_of(dcws);
  }
  return result;
}

RateTuningReport run_rate_tuning(
    const ExperimentConfig& config,
    const std::vector<std::pair<double, double>>& grid) {
  config.validate();
  if (config.test_param_grid.empty())
    throw std::invalid_argument("run_rate_tuning: empty test grid");
  if (grid.empty()) throw std::invalid_argument("run_rate_tuning: empty grid");
  for (const auto& [fp_sum, fn_sum] : grid) {
    if (!(fp_sum > 0.0 && fp_sum < 1.0 && fn_sum > 0.0 && fn_sum < 1.0))
      throw std::invalid_argument("run_rate_tuning: rate sums must be in (0,1)");
  }

  const TrainedPipeline pipe = run_training_pipeline(config);
  const std::vector<CellCosts> cells = collect_cell_costs(config, pipe);

  RateTuningReport report;
  for (const auto& [fp_sum, fn_sum] : grid) {
    const auto [delta_o, delta_o_prime] = split_rate_sum(fp_sum);
    const auto [delta_w, delta_w_prime] = split_rate_sum(fn_sum);
    const Certificate cert_o = cert_at_delta(pipe, config.m, delta_o,
                                             pipe.certificate.policy_seed);
    const Certificate cert_w = cert_at_delta(pipe, config.m, delta_w,
                                             pipe.certificate.policy_seed);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      RateTuningCell out;
      out.fp_sum = fp_sum;
      out.fn_sum = fn_sum;
      out.cell_index = c;
      out.gap = cells[c].gap;
      out.trials = cells[c].test_costs.size();
      for (double test_cost : cells[c].test_costs) {
        const DetectionVerdict v = detect_confidence_interval(
            test_cost, config.n, cert_o, cert_w, delta_o, delta_o_prime,
            delta_w, delta_w_prime);
        switch (v.verdict) {
          case Verdict::OOD: ++out.ood; break;
          case Verdict::WD: ++out.wd; break;
          case Verdict::Unknown: ++out.unknown; break;
        }
      }
      report.cells.push_back(out);
    }
  }

  // Loosening both permissible rates can only shrink the Unknown region.
  for (const auto& a : report.cells) {
    for (const auto& b : report.cells) {
      if (a.cell_index != b.cell_index) continue;
      if (b.fp_sum >= a.fp_sum && b.fn_sum >= a.fn_sum && b.unknown > a.unknown)
        throw std::logic_error(
            "run_rate_tuning: Unknown fraction increased with looser rates");
    }
  }
  return report;
}

std::string to_json(const SweepResult& sweep) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : sweep.cells) {
    nlohmann::json jc;
    jc["cell_index"] = c.cell_index;
    jc["params"] = nlohmann::json::parse(to_json(c.params));
    jc["gap"] = c.gap;
    jc["gap_std_error"] = c.gap_std_error;
    jc["trials"] = c.trials;
    jc["n"] = c.n;
    jc["ht"] = {{"ood", c.ht_ood}, {"wd", c.ht_wd}, {"unknown", c.ht_unknown}};
    jc["ci"] = {{"ood", c.ci_ood}, {"wd", c.ci_wd}, {"unknown", c.ci_unknown}};
    jc["msp"] = {{"ood", c.msp_ood}, {"not_ood", c.msp_not_ood}};
    jc["maxlogit"] = {{"ood", c.maxlogit_ood}, {"not_ood", c.maxlogit_not_ood}};
    jc["baselines_ran"] = c.baselines_ran;
    jc["mean_test_cost"] = c.mean_test_cost;
    jc["mean_one_minus_p_ood"] = c.mean_one_minus_p_ood;
    jc["mean_delta_c_ood"] = c.mean_delta_c_ood;
    jc["mean_delta_c_wd"] = c.mean_delta_c_wd;
    cells.push_back(jc);
  }
  nlohmann::json j;
  j["schema"] = "sweep_v1";
  j["n"] = sweep.n;
  j["trials_per_cell"] = sweep.trials_per_cell;
  j["certificate_id"] = sweep.certificate_id;
  j["cells"] = cells;
  return j.dump(2);
}

SweepResult sweep_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.at("schema").get<std::string>() != "sweep_v1")
    throw std::invalid_argument("sweep: unsupported schema");
  SweepResult sweep;
  sweep.n = j.at("n").get<std::uint64_t>();
  sweep.trials_per_cell = j.at("trials_per_cell").get<std::uint64_t>();
  sweep.certificate_id = j.at("certificate_id").get<std::string>();
  for (const auto& jc : j.at("cells")) {
    CellSummary c;
    c.cell_index = jc.at("cell_index").get<std::uint64_t>();
    c.params = dist_params_from_json(jc.at("params").dump());
    c.gap = jc.at("gap").get<double>();
    c.gap_std_error = jc.at("gap_std_error").get<double>();
    c.trials = jc.at("trials").get<std::uint64_t>();
    c.n = jc.at("n").get<std::uint64_t>();
    c.ht_ood = jc.at("ht").at("ood").get<std::uint64_t>();
    c.ht_wd = jc.at("ht").at("wd").get<std::uint64_t>();
    c.ht_unknown = jc.at("ht").at("unknown").get<std::uint64_t>();
    c.ci_ood = jc.at("ci").at("ood").get<std::uint64_t>();
    c.ci_wd = jc.at("ci").at("wd").get<std::uint64_t>();
    c.ci_unknown = jc.at("ci").at("unknown").get<std::uint64_t>();
    c.msp_ood = jc.at("msp").at("ood").get<std::uint64_t>();
    c.msp_not_ood = jc.at("msp").at("not_ood").get<std::uint64_t>();
    c.maxlogit_ood = jc.at("maxlogit").at("ood").get<std::uint64_t>();
    c.maxlogit_not_ood = jc.at("maxlogit").at("not_ood").get<std::uint64_t>();
    c.baselines_ran = jc.at("baselines_ran").get<bool>();
    c.mean_test_cost = jc.at("mean_test_cost").get<double>();
    c.mean_one_minus_p_ood = jc.at("mean_one_minus_p_ood").get<double>();
    c.mean_delta_c_ood = jc.at("mean_delta_c_ood").get<double>();
    c.mean_delta_c_wd = jc.at("mean_delta_c_wd").get<double>();
    sweep.cells.push_back(c);
  }
  return sweep;
}

RunArtifacts persist_results(const ExperimentConfig& config,
                             const SweepResult* sweep,
                             const RateTuningReport* rates,
                             const ValidationReport* validation,
                             const Certificate* certificate) {
  namespace fs = std::filesystem;
  RunArtifacts artifacts;
  const fs::path dir = fs::path(config.output_dir) / config.resolved_run_id();
  std::error_code ec;
  fs::create_directories(dir / "plotdata", ec);
  if (ec)
    throw std::runtime_error("cannot create output directory " + dir.string() +
                             ": " + ec.message());
  artifacts.directory = dir.string();

  write_file((dir / "config.json").string(), to_json(config) + "\n",
             artifacts.files);
  if (certificate)
    write_file((dir / "certificate.json").string(), to_json(*certificate) + "\n",
               artifacts.files);
  if (sweep) {
    write_file((dir / "sweep.csv").string(), sweep_csv(*sweep), artifacts.files);
    write_file((dir / "sweep.json").string(), to_json(*sweep) + "\n",
               artifacts.files);
    write_file((dir / "plotdata" / "sweep_long.csv").string(),
               sweep_plotdata_csv(*sweep), artifacts.files);
  }
  if (rates)
    write_file((dir / "rates.csv").string(), rates_csv(*rates), artifacts.files);
  if (validation)
    write_file((dir / "validation.json").string(), to_json(*validation) + "\n",
               artifacts.files);
  return artifacts;
}

SweepResult load_sweep(const std::string& run_dir) {
  const std::string path = run_dir + "/sweep.json";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return sweep_from_json(buf.str());
}

// ---------------------------------------------------------------------------
// Config JSON
// ---------------------------------------------------------------------------

std::string to_json(const ExperimentConfig& config) {
  nlohmann::json j;
  j["version"] = 1;
  j["benchmark"] = nlohmann::json::parse(to_json(config.benchmark));
  j["train_params"] = nlohmann::json::parse(to_json(config.train_params));
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& p : config.test_param_grid)
    grid.push_back(nlohmann::json::parse(to_json(p)));
  j["test_param_grid"] = grid;
  if (config.validation_ood_params)
    j["validation_ood_params"] =
        nlohmann::json::parse(to_json(*config.validation_ood_params));
  j["m"] = config.m;
  j["n"] = config.n;
  j["trials_per_cell"] = config.trials_per_cell;
  j["train"] = {
      {"learning_rate", config.train.learning_rate},
      {"es_samples", config.train.es_samples},
      {"iterations", config.train.iterations},
      {"delta", config.train.delta},
      {"projection_margin", config.train.projection_margin},
      {"method", config.train.method == TrainMethod::ES ? "ES" : "Reparam"},
  };
  j["prior"] = {
      {"log_variance", config.prior.log_variance},
      {"fit_temperature", config.prior.fit_temperature},
      {"fit_ridge", config.prior.fit_ridge},
      {"fit_scale", config.prior.fit_scale},
      {"fit_dataset_size", config.prior.fit_dataset_size},
  };
  j["detect"] = {
      {"alpha_ood", config.rates.alpha_ood},
      {"alpha_wd", config.rates.alpha_wd},
      {"delta_o", config.rates.delta_o},
      {"delta_o_prime", config.rates.delta_o_prime},
      {"delta_w", config.rates.delta_w},
      {"delta_w_prime", config.rates.delta_w_prime},
  };
  j["baseline"] = {{"quantile", config.baseline_quantile},
                   {"holdout", config.baseline_holdout}};
  j["oracle_samples"] = config.oracle_samples;
  j["gap_oracle_samples"] = config.gap_oracle_samples;
  j["gap_confidence"] = config.gap_confidence;
  j["fp_sets_per_trial"] = config.fp_sets_per_trial;
  j["fn_sets_per_trial"] = config.fn_sets_per_trial;
  j["gap_sets_per_trial"] = config.gap_sets_per_trial;
  if (!config.rate_grid.empty()) {
    nlohmann::json rg = nlohmann::json::array();
    for (const auto& [fp, fn] : config.rate_grid) rg.push_back({fp, fn});
    j["rate_grid"] = rg;
  }
  j["master_seed"] = config.master_seed;
  j["output_dir"] = config.output_dir;
  if (!config.run_id.empty()) j["run_id"] = config.run_id;
  return j.dump(2);
}

ExperimentConfig config_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  require_keys(j,
               {"version", "benchmark", "train_params", "test_param_grid",
                "validation_ood_params", "m", "n", "trials_per_cell", "train",
                "prior", "detect", "baseline", "oracle_samples",
                "gap_oracle_samples", "gap_confidence", "fp_sets_per_trial",
                "fn_sets_per_trial", "gap_sets_per_trial", "rate_grid",
                "master_seed", "output_dir", "run_id"},
               "config");
  if (j.at("version").get<int>() != 1)
    throw std::invalid_argument("config: unsupported version");

  ExperimentConfig config;
  config.benchmark = benchmark_from_json(j.at("benchmark").dump());
  config.train_params = dist_params_from_json(j.at("train_params").dump());
  if (j.contains("test_param_grid"))
    for (const auto& p : j["test_param_grid"])
      config.test_param_grid.push_back(dist_params_from_json(p.dump()));
  if (j.contains("validation_ood_params"))
    config.validation_ood_params =
        dist_params_from_json(j["validation_ood_params"].dump());
  if (j.contains("m")) config.m = j["m"].get<std::uint64_t>();
  if (j.contains("n")) config.n = j["n"].get<std::uint64_t>();
  if (j.contains("trials_per_cell"))
    config.trials_per_cell = j["trials_per_cell"].get<std::uint64_t>();

  if (j.contains("train")) {
    const auto& t = j["train"];
    require_keys(t,
                 {"learning_rate", "es_samples", "iterations", "delta",
                  "projection_margin", "method"},
                 "config.train");
    if (t.contains("learning_rate"))
      config.train.learning_rate = t["learning_rate"].get<double>();
    if (t.contains("es_samples"))
      config.train.es_samples = t["es_samples"].get<std::uint64_t>();
    if (t.contains("iterations"))
      config.train.iterations = t["iterations"].get<std::uint64_t>();
    if (t.contains("delta")) config.train.delta = t["delta"].get<double>();
    if (t.contains("projection_margin"))
      config.train.projection_margin = t["projection_margin"].get<double>();
    if (t.contains("method")) {
      const auto method = t["method"].get<std::string>();
      if (method == "ES")
        config.train.method = TrainMethod::ES;
      else if (method == "Reparam")
        config.train.method = TrainMethod::Reparam;
      else
        throw std::invalid_argument("config: unknown train method '" + method +
                                    "'");
    }
  }
  if (j.contains("prior")) {
    const auto& p = j["prior"];
    require_keys(p,
                 {"log_variance", "fit_temperature", "fit_ridge", "fit_scale",
                  "fit_dataset_size"},
                 "config.prior");
    if (p.contains("log_variance"))
      config.prior.log_variance = p["log_variance"].get<double>();
    if (p.contains("fit_temperature"))
      config.prior.fit_temperature = p["fit_temperature"].get<double>();
    if (p.contains("fit_ridge"))
      config.prior.fit_ridge = p["fit_ridge"].get<double>();
    if (p.contains("fit_scale"))
      config.prior.fit_scale = p["fit_scale"].get<double>();
    if (p.contains("fit_dataset_size"))
      config.prior.fit_dataset_size = p["fit_dataset_size"].get<std::uint64_t>();
  }
  if (j.contains("detect")) {
    const auto& d = j["detect"];
    require_keys(d,
                 {"alpha_ood", "alpha_wd", "delta_o", "delta_o_prime",
                  "delta_w", "delta_w_prime"},
                 "config.detect");
    if (d.contains("alpha_ood"))
      config.rates.alpha_ood = d["alpha_ood"].get<double>();
    if (d.contains("alpha_wd"))
      config.rates.alpha_wd = d["alpha_wd"].get<double>();
    if (d.contains("delta_o")) config.rates.delta_o = d["delta_o"].get<double>();
    if (d.contains("delta_o_prime"))
      config.rates.delta_o_prime = d["delta_o_prime"].get<double>();
    if (d.contains("delta_w")) config.rates.delta_w = d["delta_w"].get<double>();
    if (d.contains("delta_w_prime"))
      config.rates.delta_w_prime = d["delta_w_prime"].get<double>();
  }
  if (j.contains("baseline")) {
    const auto& b = j["baseline"];
    require_keys(b, {"quantile", "holdout"}, "config.baseline");
    if (b.contains("quantile"))
      config.baseline_quantile = b["quantile"].get<double>();
    if (b.contains("holdout"))
      config.baseline_holdout = b["holdout"].get<std::uint64_t>();
  }
  if (j.contains("oracle_samples"))
    config.oracle_samples = j["oracle_samples"].get<std::uint64_t>();
  if (j.contains("gap_oracle_samples"))
    config.gap_oracle_samples = j["gap_oracle_samples"].get<std::uint64_t>();
  if (j.contains("gap_confidence"))
    config.gap_confidence = j["gap_confidence"].get<double>();
  if (j.contains("fp_sets_per_trial"))
    config.fp_sets_per_trial = j["fp_sets_per_trial"].get<std::uint64_t>();
  if (j.contains("fn_sets_per_trial"))
    config.fn_sets_per_trial = j["fn_sets_per_trial"].get<std::uint64_t>();
  if (j.contains("gap_sets_per_trial"))
    config.gap_sets_per_trial = j["gap_sets_per_trial"].get<std::uint64_t>();
  if (j.contains("rate_grid")) {
    for (const auto& pair : j["rate_grid"]) {
      if (!pair.is_array() || pair.size() != 2)
        throw std::invalid_argument("config: rate_grid entries are [fp, fn]");
      config.rate_grid.emplace_back(pair[0].get<double>(),
                                    pair[1].get<double>());
    }
  }
  if (j.contains("master_seed"))
    config.master_seed = j["master_seed"].get<std::uint64_t>();
  if (j.contains("output_dir"))
    config.output_dir = j["output_dir"].get<std::string>();
  if (j.contains("run_id")) config.run_id = j["run_id"].get<std::string>();

  config.validate();
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

}  // namespace boundwatch
