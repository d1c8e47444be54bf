#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "boundwatch/benchmarks.hpp"
#include "boundwatch/gaussian.hpp"

namespace boundwatch {

enum class TrainMethod { ES, Reparam };

struct TrainConfig {
  double learning_rate = 0.05;
  std::uint64_t es_samples = 8;  // weight draws per iteration, shared across envs
  std::uint64_t iterations = 40;
  std::uint64_t seed = 1;
  double delta = 0.05;
  double projection_margin = 0.01;
  TrainMethod method = TrainMethod::ES;

  void validate() const;
};

struct IterationRecord {
  double bound = 0.0;      // sampled empirical bound at the pre-step psi
  double cost = 0.0;       // sampled empirical cost term
  double d2 = 0.0;
  double grad_norm = 0.0;
};

struct TrainTrace {
  std::vector<IterationRecord> iterations;
  std::vector<std::string> warnings;
};

struct TrainResult {
  DiagonalGaussian posterior;
  TrainTrace trace;
};

// Score-function estimator of the bound gradient w.r.t. psi = (mean, log s).
// Uses k weight samples shared across all environments; the prior/posterior
// likelihood ratio is formed in log space before exponentiation. Layout of
// the returned vector: [d mean entries, d log-variance entries].
// Requires k >= 2, finite D2 (project first), and R > 0.
std::vector<double> es_gradient(const DiagonalGaussian& posterior,
                                const DiagonalGaussian& prior,
                                const PreparedDataset& dataset,
                                std::uint64_t k, double delta, Rng& rng);

// Pathwise (reparameterized) gradient through w = mean + exp(log s / 2) * z
// plus the closed-form divergence gradient. Quadratic family only (the
// dataset's spec decides); clamp boundaries contribute subgradient zero.
std::vector<double> reparam_gradient(const DiagonalGaussian& posterior,
                                     const DiagonalGaussian& prior,
                                     const PreparedDataset& dataset,
                                     std::uint64_t k, double delta, Rng& rng);

// Gradient descent on the certificate upper bound from psi = prior, with a
// variance projection after every step. Deterministic function of
// (prior, dataset, config); throws (with the iteration index) if parameters
// leave the finite range.
TrainResult train(const DiagonalGaussian& prior, const EnvironmentDataset& dataset,
                  const BenchmarkSpec& spec, const TrainConfig& config);

// The single fixed policy draw all certificates and detections refer to.
WeightSample finalize_policy(const DiagonalGaussian& posterior,
                             std::uint64_t policy_seed);

// Closed-form gradient of D2(posterior || prior) w.r.t. psi; exposed for the
// finite-difference checks.
std::vector<double> renyi2_gradient(const DiagonalGaussian& posterior,
                                    const DiagonalGaussian& prior);

// Navigation prior: ridge least squares from rendered depth profiles to
// softmax-of-clearance targets on a dataset disjoint from training, scaled
// by `scale` to set decision sharpness against the posterior sampling noise.
// No intercept: bias entries stay at zero, which keeps the argmax invariant
// under any positive rescaling of the observation.
DiagonalGaussian fit_nav_prior(const BenchmarkSpec& spec,
                               const EnvironmentDataset& prior_dataset,
                               double temperature, double ridge,
                               double log_variance, double scale = 1.0);

// iteration,bound,cost,d2,grad_norm
void export_trace_csv(const TrainTrace& trace, const std::string& path);

}  // namespace boundwatch
