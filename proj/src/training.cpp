#include "boundwatch/training.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "boundwatch/certificate.hpp"
#include "boundwatch/format.hpp"
#include "boundwatch/kernels.hpp"

namespace boundwatch {

namespace {

constexpr double kMinRegularizer = 1e-12;
constexpr std::uint64_t kPolicyStream = 0x706f6c69637973ULL;

struct GradientDiagnostics {
  std::vector<double> grad;
  double sampled_cost = 0.0;  // mean over the k draws of the dataset cost
  double d2 = 0.0;
  double r = 0.0;
};

void check_gradient_inputs(const DiagonalGaussian& posterior,
                           const DiagonalGaussian& prior, std::uint64_t k,
                           double d2) {
  posterior.validate();
  prior.validate();
  if (posterior.dim() != prior.dim())
    throw std::invalid_argument("gradient: posterior/prior dimension mismatch");
  if (k < 2) throw std::invalid_argument("gradient: need k >= 2 weight samples");
  if (std::isinf(d2))
    throw std::domain_error(
        "gradient: infinite divergence; project variances first");
}

// Mean and log-variance sensitivities of ln N_psi(w).
inline double score_mean(double w, double mu, double inv_s) {
  return (w - mu) * inv_s;
}
inline double score_log_var(double w, double mu, double inv_s) {
  const double d = w - mu;
  return -0.5 + 0.5 * (d * d) * inv_s;
}

GradientDiagnostics es_gradient_impl(const DiagonalGaussian& posterior,
                                     const DiagonalGaussian& prior,
                                     const PreparedDataset& dataset,
                                     std::uint64_t k, double delta, Rng& rng,
                                     TrainTrace* trace) {
  const double d2 = renyi2_divergence(posterior, prior);
  check_gradient_inputs(posterior, prior, k, d2);
  const std::uint64_t m = dataset.size();
  double r = regularizer(d2, m, delta);
  if (r <= 0.0) throw std::domain_error("es_gradient: regularizer must be > 0");
  if (r < kMinRegularizer) {
    if (trace)
      trace->warnings.push_back("regularizer underflow clamped at iteration " +
                                fmt_u64(trace->iterations.size()));
    r = kMinRegularizer;
  }

  const std::size_t d = posterior.dim();
  std::vector<double> inv_s(d), inv_s0(d);
  for (std::size_t i = 0; i < d; ++i) {
    inv_s[i] = std::exp(-posterior.log_variance[i]);
    inv_s0[i] = std::exp(-prior.log_variance[i]);
  }

  GradientDiagnostics out;
  out.d2 = d2;
  out.r = r;
  out.grad.assign(2 * d, 0.0);
  std::vector<double> z(d);
  const double reg_scale = 4.0 * static_cast<double>(m) * std::sqrt(r);

  for (std::uint64_t i = 0; i < k; ++i) {
    rng.fill_normal(z.data(), d);
    const WeightSample w = sample_with_noise(posterior, z, 0);
    const double cost = dataset.mean_cost(w);
    out.sampled_cost += cost;

    // ln(N_psi(w)/N_psi0(w)), assembled per dimension to stay in log space
    double log_ratio = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double dp = w.weights[j] - posterior.mean[j];
      const double d0 = w.weights[j] - prior.mean[j];
      log_ratio += 0.5 * (prior.log_variance[j] - posterior.log_variance[j]) -
                   0.5 * dp * dp * inv_s[j] + 0.5 * d0 * d0 * inv_s0[j];
    }
    const double weight = cost + std::exp(log_ratio - d2) / reg_scale;
    for (std::size_t j = 0; j < d; ++j) {
      out.grad[j] += weight * score_mean(w.weights[j], posterior.mean[j], inv_s[j]);
      out.grad[d + j] +=
          weight * score_log_var(w.weights[j], posterior.mean[j], inv_s[j]);
    }
  }
  const double inv_k = 1.0 / static_cast<double>(k);
  for (double& g : out.grad) g *= inv_k;
  out.sampled_cost *= inv_k;
  return out;
}

GradientDiagnostics reparam_gradient_impl(const DiagonalGaussian& posterior,
                                          const DiagonalGaussian& prior,
                                          const PreparedDataset& dataset,
                                          std::uint64_t k, double delta,
                                          Rng& rng, TrainTrace* trace) {
  if (dataset.spec().family != Family::SmoothQuadratic)
    throw std::invalid_argument(
        "reparam_gradient: requires the differentiable quadratic family");
  const double d2 = renyi2_divergence(posterior, prior);
  check_gradient_inputs(posterior, prior, k, d2);
  const std::uint64_t m = dataset.size();
  double r = regularizer(d2, m, delta);
  if (r < kMinRegularizer) {
    if (trace)
      trace->warnings.push_back("regularizer underflow clamped at iteration " +
                                fmt_u64(trace->iterations.size()));
    r = kMinRegularizer;
  }

  const std::size_t d = posterior.dim();
  const std::vector<double> sd = posterior.stddevs();
  GradientDiagnostics out;
  out.d2 = d2;
  out.r = r;
  out.grad.assign(2 * d, 0.0);

  std::vector<double> z(d);
  const double inv_beta = 1.0 / dataset.spec().quad.beta;
  for (std::uint64_t i = 0; i < k; ++i) {
    rng.fill_normal(z.data(), d);
    const WeightSample w = sample_with_noise(posterior, z, 0);
    for (std::size_t e = 0; e < dataset.size(); ++e) {
      const EpisodeResult episode = dataset.episode(e, w);
      out.sampled_cost += episode.cost;
      if (episode.cost <= 0.0 || episode.cost >= 1.0) continue;  // clamped: flat
      // d cost / d w_j = 2 (w_j - target_j) / beta, pulled back through
      // w = mu + sd * z
      const auto& target = dataset.quad_env(e).target;
      for (std::size_t j = 0; j < d; ++j) {
        const double dc = 2.0 * (w.weights[j] - target[j]) * inv_beta;
        out.grad[j] += dc;
        out.grad[d + j] += dc * 0.5 * sd[j] * z[j];
      }
    }
  }
  const double scale = 1.0 / (static_cast<double>(m) * static_cast<double>(k));
  for (double& g : out.grad) g *= scale;
  out.sampled_cost *= scale;

  const std::vector<double> d2_grad = renyi2_gradient(posterior, prior);
  const double reg_scale = 4.0 * static_cast<double>(m) * std::sqrt(r);
  for (std::size_t j = 0; j < 2 * d; ++j) out.grad[j] += d2_grad[j] / reg_scale;
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (es_samples < 2)
    throw std::invalid_argument("TrainConfig: es_samples must be >= 2");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("TrainConfig: delta must be in (0,1)");
  if (!(projection_margin > 0.0 && projection_margin < 1.0))
    throw std::invalid_argument("TrainConfig: projection_margin must be in (0,1)");
}

std::vector<double> renyi2_gradient(const DiagonalGaussian& posterior,
                                    const DiagonalGaussian& prior) {
  const std::size_t d = posterior.dim();
  if (d != prior.dim())
    throw std::invalid_argument("renyi2_gradient: dimension mismatch");
  std::vector<double> grad(2 * d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    const double s = std::exp(posterior.log_variance[j]);
    const double s0 = std::exp(prior.log_variance[j]);
    const double gap = 2.0 * s0 - s;
    if (gap <= 0.0)
      throw std::domain_error("renyi2_gradient: infinite divergence");
    const double dm = posterior.mean[j] - prior.mean[j];
    grad[j] = 2.0 * dm / gap;
    const double d_ds =
        dm * dm / (gap * gap) + 0.5 / gap - 0.5 / s;
    grad[d + j] = d_ds * s;
  }
  return grad;
}

std::vector<double> es_gradient(const DiagonalGaussian& posterior,
                                const DiagonalGaussian& prior,
                                const PreparedDataset& dataset,
                                std::uint64_t k, double delta, Rng& rng) {
  return es_gradient_impl(posterior, prior, dataset, k, delta, rng, nullptr)
      .grad;
}

std::vector<double> reparam_gradient(const DiagonalGaussian& posterior,
                                     const DiagonalGaussian& prior,
                                     const PreparedDataset& dataset,
                                     std::uint64_t k, double delta, Rng& rng) {
  return reparam_gradient_impl(posterior, prior, dataset, k, delta, rng,
                               nullptr)
      .grad;
}

TrainResult train(const DiagonalGaussian& prior, const EnvironmentDataset& dataset,
                  const BenchmarkSpec& spec, const TrainConfig& config) {
  config.validate();
  prior.validate();
  if (dataset.size() < 8)
    throw std::invalid_argument("train: dataset must hold at least 8 environments");

  const PreparedDataset prepared(spec, dataset);
  TrainResult result;
  result.posterior = prior;
  Rng rng(derive_seed(config.seed, 0x747261696eULL));

  for (std::uint64_t iter = 0; iter < config.iterations; ++iter) {
    GradientDiagnostics diag;
    if (config.method == TrainMethod::ES) {
      diag = es_gradient_impl(result.posterior, prior, prepared,
                              config.es_samples, config.delta, rng,
                              &result.trace);
    } else {
      diag = reparam_gradient_impl(result.posterior, prior, prepared,
                                   config.es_samples, config.delta, rng,
                                   &result.trace);
    }

    IterationRecord rec;
    rec.cost = diag.sampled_cost;
    rec.d2 = diag.d2;
    rec.bound = diag.sampled_cost + std::sqrt(diag.r);
    rec.grad_norm = std::sqrt(kernels::active().dot(
        diag.grad.data(), diag.grad.data(), diag.grad.size()));
    result.trace.iterations.push_back(rec);

    const std::size_t d = result.posterior.dim();
    for (std::size_t j = 0; j < d; ++j) {
      result.posterior.mean[j] -= config.learning_rate * diag.grad[j];
      result.posterior.log_variance[j] -= config.learning_rate * diag.grad[d + j];
    }
    result.posterior =
        project_variances(result.posterior, prior, config.projection_margin);
    for (std::size_t j = 0; j < d; ++j) {
      if (!std::isfinite(result.posterior.mean[j]) ||
          !std::isfinite(result.posterior.log_variance[j]))
        throw std::runtime_error("train: parameters diverged at iteration " +
                                 fmt_u64(iter));
    }
    // The projection keeps variances feasible, so a non-finite divergence
    // here means the means overflowed.
    if (!std::isfinite(renyi2_divergence(result.posterior, prior)))
      throw std::runtime_error("train: parameters diverged at iteration " +
                               fmt_u64(iter));
  }
  return result;
}

WeightSample finalize_policy(const DiagonalGaussian& posterior,
                             std::uint64_t policy_seed) {
  posterior.validate();
  Rng rng(derive_seed(policy_seed, kPolicyStream));
  return sample(posterior, rng, policy_seed);
}

DiagonalGaussian fit_nav_prior(const BenchmarkSpec& spec,
                               const EnvironmentDataset& prior_dataset,
                               double temperature, double ridge,
                               double log_variance, double scale) {
  if (spec.family != Family::PrimitiveNav)
    throw std::invalid_argument("fit_nav_prior: navigation family only");
  if (!(temperature > 0.0))
    throw std::invalid_argument("fit_nav_prior: temperature must be > 0");
  if (ridge < 0.0)
    throw std::invalid_argument("fit_nav_prior: ridge must be >= 0");
  if (!(scale > 0.0))
    throw std::invalid_argument("fit_nav_prior: scale must be > 0");

  const PreparedDataset prepared(spec, prior_dataset);
  const std::size_t n_env = prepared.size();
  const std::size_t bins = static_cast<std::size_t>(spec.nav.depth_bins);
  const std::size_t k_count = static_cast<std::size_t>(spec.nav.k_primitives);
  const std::size_t features = bins;  // depth profile only, no intercept

  // Feature rows and per-primitive softmax targets. Observations and
  // clearances come from the same prepared cache the policy will see.
  std::vector<double> gram(features * features, 0.0);
  std::vector<std::vector<double>> rhs(k_count,
                                       std::vector<double>(features, 0.0));
  std::vector<double> row(features);
  std::vector<double> targets(k_count);
  for (std::size_t e = 0; e < n_env; ++e) {
    const std::vector<double>& obs = prepared.nav_observation(e);
    const std::vector<double>& clearances = prepared.nav_clearances(e);
    for (std::size_t b = 0; b < bins; ++b) row[b] = obs[b];

    double max_t = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < k_count; ++k) {
      targets[k] = clearances[k] / temperature;
      if (targets[k] > max_t) max_t = targets[k];
    }
    double z = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
      targets[k] = std::exp(targets[k] - max_t);
      z += targets[k];
    }
    for (std::size_t k = 0; k < k_count; ++k) targets[k] /= z;

    for (std::size_t a = 0; a < features; ++a) {
      for (std::size_t b = 0; b < features; ++b)
        gram[a * features + b] += row[a] * row[b];
      for (std::size_t k = 0; k < k_count; ++k)
        rhs[k][a] += row[a] * targets[k];
    }
  }
  for (std::size_t a = 0; a < features; ++a) gram[a * features + a] += ridge;

  // Cholesky factorization of the shared Gram matrix.
  std::vector<double> chol = gram;
  for (std::size_t i = 0; i < features; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = chol[i * features + j];
      for (std::size_t p = 0; p < j; ++p)
        s -= chol[i * features + p] * chol[j * features + p];
      if (i == j) {
        if (s <= 0.0)
          throw std::runtime_error("fit_nav_prior: singular Gram matrix");
        chol[i * features + i] = std::sqrt(s);
      } else {
        chol[i * features + j] = s / chol[j * features + j];
      }
    }
  }
  auto solve = [&](const std::vector<double>& b) {
    std::vector<double> y(features);
    for (std::size_t i = 0; i < features; ++i) {
      double s = b[i];
      for (std::size_t p = 0; p < i; ++p) s -= chol[i * features + p] * y[p];
      y[i] = s / chol[i * features + i];
    }
    std::vector<double> x(features);
    for (std::size_t ii = features; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t p = ii + 1; p < features; ++p)
        s -= chol[p * features + ii] * x[p];
      x[ii] = s / chol[ii * features + ii];
    }
    return x;
  };

  DiagonalGaussian prior;
  prior.mean.assign(k_count * (bins + 1), 0.0);  // bias entries stay zero
  prior.log_variance.assign(k_count * (bins + 1), log_variance);
  for (std::size_t k = 0; k < k_count; ++k) {
    const std::vector<double> beta = solve(rhs[k]);
    for (std::size_t b = 0; b < bins; ++b)
      prior.mean[k * bins + b] = scale * beta[b];
  }
  return prior;
}

void export_trace_csv(const TrainTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace csv: " + path);
  out << "iteration,bound,cost,d2,grad_norm\n";
  for (std::size_t i = 0; i < trace.iterations.size(); ++i) {
    const auto& rec = trace.iterations[i];
    out << i << ',' << fmt_double(rec.bound) << ',' << fmt_double(rec.cost)
        << ',' << fmt_double(rec.d2) << ',' << fmt_double(rec.grad_norm) << '\n';
  }
}

}  // namespace boundwatch
