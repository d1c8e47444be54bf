#include "boundwatch/gaussian.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "boundwatch/kernels.hpp"

namespace boundwatch {

namespace {
constexpr double kLn2Pi = 1.8378770664093454835606594728112;
}

std::vector<double> DiagonalGaussian::variances() const {
  std::vector<double> s(log_variance.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::exp(log_variance[i]);
  return s;
}

std::vector<double> DiagonalGaussian::stddevs() const {
  std::vector<double> sd(log_variance.size());
  for (std::size_t i = 0; i < sd.size(); ++i)
    sd[i] = std::exp(0.5 * log_variance[i]);
  return sd;
}

void DiagonalGaussian::validate() const {
  if (mean.empty())
    throw std::invalid_argument("DiagonalGaussian: dimension must be >= 1");
  if (mean.size() != log_variance.size())
    throw std::invalid_argument(
        "DiagonalGaussian: mean and log_variance lengths differ");
  for (double m : mean)
    if (!std::isfinite(m))
      throw std::invalid_argument("DiagonalGaussian: non-finite mean entry");
  for (double lv : log_variance)
    if (!std::isfinite(lv))
      throw std::invalid_argument(
          "DiagonalGaussian: non-finite log_variance entry");
}

DiagonalGaussian DiagonalGaussian::standard(std::size_t dim) {
  return DiagonalGaussian{std::vector<double>(dim, 0.0),
                          std::vector<double>(dim, 0.0)};
}

WeightSample sample_with_noise(const DiagonalGaussian& dist,
                               const std::vector<double>& z,
                               std::uint64_t seed_tag) {
  if (z.size() != dist.dim())
    throw std::invalid_argument("sample_with_noise: noise dimension mismatch");
  const std::vector<double> sd = dist.stddevs();
  WeightSample out;
  out.seed_tag = seed_tag;
  out.weights.resize(dist.dim());
  kernels::active().gauss_transform(dist.mean.data(), sd.data(), z.data(),
                                    out.weights.data(), dist.dim());
  return out;
}

WeightSample sample(const DiagonalGaussian& dist, Rng& rng,
                    std::uint64_t seed_tag) {
  std::vector<double> z(dist.dim());
  rng.fill_normal(z.data(), z.size());
  return sample_with_noise(dist, z, seed_tag);
}

double log_density(const DiagonalGaussian& dist, const std::vector<double>& w) {
  const std::size_t d = dist.dim();
  if (w.size() != d)
    throw std::invalid_argument("log_density: dimension mismatch");
  const auto& ops = kernels::active();
  std::vector<double> inv_s(d);
  for (std::size_t i = 0; i < d; ++i) inv_s[i] = std::exp(-dist.log_variance[i]);
  const double quad = ops.weighted_sq_dist(w.data(), dist.mean.data(),
                                           inv_s.data(), d);
  const double log_det = ops.sum(dist.log_variance.data(), d);
  return -0.5 * (static_cast<double>(d) * kLn2Pi + log_det + quad);
}

bool renyi2_feasible(const DiagonalGaussian& p, const DiagonalGaussian& p0) {
  if (p.dim() != p0.dim())
    throw std::invalid_argument("renyi2: dimension mismatch");
  for (std::size_t i = 0; i < p.dim(); ++i) {
    if (2.0 * std::exp(p0.log_variance[i]) - std::exp(p.log_variance[i]) <= 0.0)
      return false;
  }
  return true;
}

double renyi2_divergence(const DiagonalGaussian& p, const DiagonalGaussian& p0) {
  const std::size_t d = p.dim();
  if (d != p0.dim())
    throw std::invalid_argument("renyi2_divergence: dimension mismatch");
  double quad = 0.0;
  double log_term = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double s = std::exp(p.log_variance[i]);
    const double s0 = std::exp(p0.log_variance[i]);
    const double gap = 2.0 * s0 - s;
    if (gap <= 0.0) return std::numeric_limits<double>::infinity();
    const double dm = p.mean[i] - p0.mean[i];
    quad += dm * dm / gap;
    // ln(gap * s / s0^2), assembled from log-variances for wide dynamic range
    log_term += std::log(gap) + p.log_variance[i] - 2.0 * p0.log_variance[i];
  }
  return quad - 0.5 * log_term;
}

DiagonalGaussian project_variances(const DiagonalGaussian& p,
                                   const DiagonalGaussian& p0, double margin) {
  if (!(margin > 0.0 && margin < 1.0))
    throw std::invalid_argument("project_variances: margin must be in (0,1)");
  if (p.dim() != p0.dim())
    throw std::invalid_argument("project_variances: dimension mismatch");
  DiagonalGaussian out = p;
  const double log_cap = std::log(2.0 - margin);
  for (std::size_t i = 0; i < p.dim(); ++i) {
    const double cap = log_cap + p0.log_variance[i];
    if (out.log_variance[i] > cap) out.log_variance[i] = cap;
  }
  return out;
}

std::string to_json(const DiagonalGaussian& dist) {
  nlohmann::json j;
  j["mean"] = dist.mean;
  j["log_variance"] = dist.log_variance;
  return j.dump();
}

DiagonalGaussian gaussian_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  DiagonalGaussian g;
  g.mean = j.at("mean").get<std::vector<double>>();
  g.log_variance = j.at("log_variance").get<std::vector<double>>();
  g.validate();
  return g;
}

}  // namespace boundwatch
