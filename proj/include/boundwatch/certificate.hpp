#pragma once

#include <cstdint>
#include <string>

#include "boundwatch/gaussian.hpp"

namespace boundwatch {

// High-probability cost certificate for a single policy drawn from a trained
// posterior: with probability at least 1-delta over the draw of the training
// set and the policy,
//   lower_bound <= expected training-distribution cost <= upper_bound.
struct Certificate {
  double empirical_cost = 0.0;  // mean training cost of the fixed policy
  double regularizer = 0.0;     // R
  double upper_bound = 0.0;     // empirical_cost + sqrt(R)
  double lower_bound = 0.0;     // empirical_cost - sqrt(R)
  double delta = 0.0;
  std::uint64_t m = 0;          // training-set size
  double d2 = 0.0;              // Renyi-2 divergence posterior||prior
  std::uint64_t policy_seed = 0;

  // Serialized alongside the certificate so the fixed policy is
  // reconstructible from (posterior, policy_seed) alone.
  DiagonalGaussian prior;
  DiagonalGaussian posterior;

  // Stable content hash, echoed by detection records.
  std::string id() const;
};

// R = (d2 + ln(2*sqrt(m) / (delta/2)^3)) / (2m).
// Requires m >= 8 and delta in (0,1); d2 >= 0 (may be +infinity, in which
// case R is +infinity and the certificate is vacuous).
double regularizer(double d2, std::uint64_t m, double delta);

Certificate build_certificate(double empirical_cost, double d2,
                              std::uint64_t m, double delta,
                              std::uint64_t policy_seed,
                              const DiagonalGaussian& prior,
                              const DiagonalGaussian& posterior);

// Schema "cert_v1".
std::string to_json(const Certificate& cert);
Certificate certificate_from_json(const std::string& text);

void save_certificate(const Certificate& cert, const std::string& path);
Certificate load_certificate(const std::string& path);

}  // namespace boundwatch
