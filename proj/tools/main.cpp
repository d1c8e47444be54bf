// boundwatch: train cost-certified policies on synthetic environment
// distributions and run statistically guaranteed OOD/WD detection on test
// datasets.
//
// Exit codes: 0 success (detect: WD), 1 detect: OOD, 2 usage or input error,
// 3 detect: Unknown. The detect codes let shell pipelines branch on verdicts.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "boundwatch/certificate.hpp"
#include "boundwatch/detectors.hpp"
#include "boundwatch/format.hpp"
#include "boundwatch/harness.hpp"
#include "boundwatch/training.hpp"

namespace bw = boundwatch;

namespace {

// One cost per line, each in [0,1]; parse errors cite the line number.
std::vector<double> read_costs_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read costs file: " + path);
  std::vector<double> costs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t pos = 0;
    double value = 0.0;
    try {
      value = std::stod(line, &pos);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": not a number: '" + line + "'");
    }
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
    if (pos != line.size())
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": trailing characters: '" + line + "'");
    if (!(value >= 0.0 && value <= 1.0))
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": cost " + bw::fmt_double(value) +
                               " outside [0,1]");
    costs.push_back(value);
  }
  if (costs.empty()) throw std::runtime_error(path + ": no costs found");
  return costs;
}

bw::ExperimentConfig load_config_with_overrides(
    const std::string& path, const std::optional<std::uint64_t>& seed,
    const std::string& outdir) {
  bw::ExperimentConfig config = bw::load_config(path);
  if (seed) config.master_seed = *seed;
  if (!outdir.empty()) config.output_dir = outdir;
  return config;
}

int run_train(const std::string& config_path,
              const std::optional<std::uint64_t>& seed,
              const std::string& outdir, bool verbose) {
  const bw::ExperimentConfig config =
      load_config_with_overrides(config_path, seed, outdir);
  const bw::TrainedPipeline pipe = bw::run_training_pipeline(config);

  namespace fs = std::filesystem;
  const fs::path dir = fs::path(config.output_dir) / config.resolved_run_id();
  fs::create_directories(dir);
  bw::save_certificate(pipe.certificate, (dir / "certificate.json").string());
  std::ofstream prior_out((dir / "prior.json").string());
  prior_out << bw::to_json(pipe.prior) << '\n';
  std::ofstream post_out((dir / "posterior.json").string());
  post_out << bw::to_json(pipe.posterior) << '\n';
  bw::export_trace_csv(pipe.trace, (dir / "trace.csv").string());

  if (verbose) {
    for (std::size_t i = 0; i < pipe.trace.iterations.size(); ++i)
      std::cerr << "iter " << i << " bound "
                << bw::fmt_double(pipe.trace.iterations[i].bound) << "\n";
  }
  std::cout << "trained: cost=" << bw::fmt_double(pipe.empirical_cost)
            << " d2=" << bw::fmt_double(pipe.d2)
            << " upper=" << bw::fmt_double(pipe.certificate.upper_bound)
            << " lower=" << bw::fmt_double(pipe.certificate.lower_bound)
            << " out=" << dir.string() << "\n";
  return 0;
}

int run_certify(const std::string& posterior_path, const std::string& prior_path,
                const std::string& costs_path, double delta,
                std::uint64_t m_flag, std::uint64_t policy_seed,
                const std::string& out_path) {
  auto read_gaussian = [](const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return bw::gaussian_from_json(buf.str());
  };
  const bw::DiagonalGaussian posterior = read_gaussian(posterior_path);
  const bw::DiagonalGaussian prior = read_gaussian(prior_path);
  const std::vector<double> costs = read_costs_csv(costs_path);
  const std::uint64_t m = m_flag != 0 ? m_flag : costs.size();
  if (m_flag != 0 && m_flag != costs.size())
    throw std::runtime_error("--m disagrees with the costs file (" +
                             std::to_string(costs.size()) + " rows)");
  double mean = 0.0;
  for (double c : costs) mean += c;
  mean /= static_cast<double>(costs.size());

  const double d2 = bw::renyi2_divergence(posterior, prior);
  const bw::Certificate cert =
      bw::build_certificate(mean, d2, m, delta, policy_seed, prior, posterior);
  bw::save_certificate(cert, out_path);
  std::cout << "certificate: cost=" << bw::fmt_double(cert.empirical_cost)
            << " d2=" << bw::fmt_double(cert.d2)
            << " upper=" << bw::fmt_double(cert.upper_bound)
            << " lower=" << bw::fmt_double(cert.lower_bound) << " -> "
            << out_path << "\n";
  return 0;
}

int run_detect(const std::string& cert_path, const std::string& costs_path,
               const std::string& method, const std::vector<double>& rates) {
  const bw::Certificate cert = bw::load_certificate(cert_path);
  const std::vector<double> costs = read_costs_csv(costs_path);
  double mean = 0.0;
  for (double c : costs) mean += c;
  mean /= static_cast<double>(costs.size());
  const std::uint64_t n = costs.size();

  bw::DetectionVerdict verdict;
  if (method == "ht") {
    double alpha_o = 0.05, alpha_w = 0.05;
    if (rates.size() == 2) {
      alpha_o = rates[0];
      alpha_w = rates[1];
    } else if (!rates.empty()) {
      throw std::runtime_error("--rates for ht takes alpha_ood,alpha_wd");
    }
    verdict = bw::detect_hypothesis(mean, n, cert, alpha_o, alpha_w);
  } else if (method == "ci") {
    double d_o = 0.01, d_o_prime = 0.04, d_w = 0.01, d_w_prime = 0.04;
    if (rates.size() == 4) {
      d_o = rates[0];
      d_o_prime = rates[1];
      d_w = rates[2];
      d_w_prime = rates[3];
    } else if (!rates.empty()) {
      throw std::runtime_error(
          "--rates for ci takes delta_o,delta_o_prime,delta_w,delta_w_prime");
    }
    verdict = bw::detect_confidence_interval(mean, n, cert, d_o, d_o_prime, d_w,
                                             d_w_prime);
  } else {
    throw std::runtime_error("unknown method '" + method + "' (ht or ci)");
  }

  std::cout << bw::verdict_line(verdict) << "\n";
  switch (verdict.verdict) {
    case bw::Verdict::WD: return 0;
    case bw::Verdict::OOD: return 1;
    case bw::Verdict::Unknown: return 3;
  }
  return 2;
}

int run_sweep(const std::string& config_path,
              const std::optional<std::uint64_t>& seed,
              const std::string& outdir) {
  const bw::ExperimentConfig config =
      load_config_with_overrides(config_path, seed, outdir);
  const bw::TrainedPipeline pipe = bw::run_training_pipeline(config);
  const bw::SweepResult sweep = bw::run_detection_sweep(config);
  std::optional<bw::RateTuningReport> rates;
  if (!config.rate_grid.empty())
    rates = bw::run_rate_tuning(config, config.rate_grid);
  const bw::RunArtifacts artifacts =
      bw::persist_results(config, &sweep, rates ? &*rates : nullptr, nullptr,
                          &pipe.certificate);
  for (const auto& f : artifacts.files) std::cout << f << "\n";
  return 0;
}

int run_validate(const std::string& config_path,
                 const std::optional<std::uint64_t>& seed,
                 const std::string& outdir) {
  const bw::ExperimentConfig config =
      load_config_with_overrides(config_path, seed, outdir);
  const bw::ValidationReport report = bw::run_guarantee_validation(config);
  const bw::RunArtifacts artifacts =
      bw::persist_results(config, nullptr, nullptr, &report, nullptr);
  std::cout << bw::to_json(report) << "\n";
  for (const auto& f : artifacts.files) std::cout << f << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "boundwatch: certified policy training and task-driven OOD/WD "
      "detection"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::string config_path, outdir;
  std::optional<std::uint64_t> seed;
  bool verbose = false;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    if (needs_config)
      sub->add_option("--config", config_path, "experiment config (JSON)")
          ->required();
    sub->add_option("--seed", seed, "master seed override");
    sub->add_option("--out", outdir, "output directory override");
    sub->add_flag("--verbose", verbose, "chatty progress on stderr");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train and certify");
  add_common(train_cmd, true);

  CLI::App* certify_cmd =
      app.add_subcommand("certify", "build a certificate from cost records");
  std::string posterior_path, prior_path, costs_path,
      cert_out = "certificate.json";
  double delta = 0.05;
  std::uint64_t m_flag = 0, policy_seed = 0;
  certify_cmd->add_option("--posterior", posterior_path, "posterior JSON")
      ->required();
  certify_cmd->add_option("--prior", prior_path, "prior JSON")->required();
  certify_cmd->add_option("--costs", costs_path, "per-environment costs CSV")
      ->required();
  certify_cmd->add_option("--delta", delta, "confidence parameter");
  certify_cmd->add_option("--m", m_flag,
                          "training-set size (default: costs row count)");
  certify_cmd->add_option("--policy-seed", policy_seed, "fixed policy draw seed");
  certify_cmd->add_option("--out", cert_out, "certificate output path");

  CLI::App* detect_cmd =
      app.add_subcommand("detect", "verdict for a test dataset's costs");
  std::string cert_path, method = "ci";
  std::vector<double> rates;
  detect_cmd->add_option("--cert", cert_path, "certificate JSON")->required();
  detect_cmd->add_option("--costs", costs_path, "test costs CSV, one per line")
      ->required();
  detect_cmd->add_option("--method", method, "ht or ci");
  detect_cmd
      ->add_option("--rates", rates,
                   "ht: alpha_ood,alpha_wd; ci: "
                   "delta_o,delta_o_prime,delta_w,delta_w_prime")
      ->delimiter(',');

  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "detector sweep over the test grid");
  add_common(sweep_cmd, true);

  CLI::App* validate_cmd =
      app.add_subcommand("validate", "Monte-Carlo guarantee validation");
  add_common(validate_cmd, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(train_cmd))
      return run_train(config_path, seed, outdir, verbose);
    if (app.got_subcommand(certify_cmd))
      return run_certify(posterior_path, prior_path, costs_path, delta, m_flag,
                         policy_seed, cert_out);
    if (app.got_subcommand(detect_cmd))
      return run_detect(cert_path, costs_path, method, rates);
    if (app.got_subcommand(sweep_cmd)) return run_sweep(config_path, seed, outdir);
    if (app.got_subcommand(validate_cmd))
      return run_validate(config_path, seed, outdir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
