#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "boundwatch/rng.hpp"

namespace boundwatch {

// Diagonal Gaussian over policy-weight vectors, parameterized as
// psi = (mean, log_variance) so variances stay positive unconstrained.
struct DiagonalGaussian {
  std::vector<double> mean;
  std::vector<double> log_variance;

  std::size_t dim() const { return mean.size(); }

  std::vector<double> variances() const;
  std::vector<double> stddevs() const;

  // Throws std::invalid_argument on empty/mismatched/non-finite parameters.
  void validate() const;

  static DiagonalGaussian standard(std::size_t dim);

  bool operator==(const DiagonalGaussian&) const = default;
};

struct WeightSample {
  std::vector<double> weights;
  std::uint64_t seed_tag = 0;
};

// weights_i = mean_i + sqrt(exp(log_variance_i)) * z_i. The z-vector form is
// the deterministic core; the Rng overload draws z itself.
WeightSample sample_with_noise(const DiagonalGaussian& dist,
                               const std::vector<double>& z,
                               std::uint64_t seed_tag);
WeightSample sample(const DiagonalGaussian& dist, Rng& rng,
                    std::uint64_t seed_tag = 0);

// ln N(w; mean, diag(s)) = sum_i [ -0.5*ln(2*pi*s_i) - (w_i-mean_i)^2/(2 s_i) ]
double log_density(const DiagonalGaussian& dist, const std::vector<double>& w);

// Order-2 Renyi divergence D2(p || p0) in closed form.
//
// Finite iff every s_i < 2*s0_i; returns +infinity otherwise (a vacuous
// bound, not an error). For feasible pairs,
//   D2 = sum_i (mu_i-mu0_i)^2/(2 s0_i - s_i)
//      - 0.5 * sum_i ln( (2 s0_i - s_i) * s_i / s0_i^2 ),
// which is the value of ln E_{w~p0}[(p(w)/p0(w))^2].
double renyi2_divergence(const DiagonalGaussian& p, const DiagonalGaussian& p0);

// True iff s_i < 2*s0_i for every dimension (finite D2).
bool renyi2_feasible(const DiagonalGaussian& p, const DiagonalGaussian& p0);

// Clamp each variance to (2 - margin)*s0_i; mean untouched. The result always
// satisfies the finiteness condition above. margin must lie in (0,1).
DiagonalGaussian project_variances(const DiagonalGaussian& p,
                                   const DiagonalGaussian& p0, double margin);

// JSON object {"mean": [...], "log_variance": [...]}.
std::string to_json(const DiagonalGaussian& dist);
DiagonalGaussian gaussian_from_json(const std::string& text);

}  // namespace boundwatch
