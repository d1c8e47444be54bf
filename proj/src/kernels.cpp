#include "boundwatch/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <string>

namespace boundwatch::kernels {

namespace {

double sum_scalar(const double* x, std::size_t n) {
  double acc[kLanes] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t main = n - n % kLanes;
  for (std::size_t i = 0; i < main; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += x[i + l];
  }
  double s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
  for (std::size_t i = main; i < n; ++i) s += x[i];
  return s;
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc[kLanes] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t main = n - n % kLanes;
  for (std::size_t i = 0; i < main; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += x[i + l] * y[i + l];
  }
  double s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
  for (std::size_t i = main; i < n; ++i) s += x[i] * y[i];
  return s;
}

double sq_dist_scalar(const double* x, const double* y, std::size_t n) {
  double acc[kLanes] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t main = n - n % kLanes;
  for (std::size_t i = 0; i < main; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) {
      const double d = x[i + l] - y[i + l];
      acc[l] += d * d;
    }
  }
  double s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
  for (std::size_t i = main; i < n; ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

double weighted_sq_dist_scalar(const double* x, const double* y,
                               const double* w, std::size_t n) {
  double acc[kLanes] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t main = n - n % kLanes;
  for (std::size_t i = 0; i < main; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) {
      const double d = x[i + l] - y[i + l];
      acc[l] += (d * d) * w[i + l];
    }
  }
  double s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
  for (std::size_t i = main; i < n; ++i) {
    const double d = x[i] - y[i];
    s += (d * d) * w[i];
  }
  return s;
}

void gauss_transform_scalar(const double* mu, const double* sigma,
                            const double* z, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = mu[i] + sigma[i] * z[i];
}

double min_sq_point_dist_scalar(double px, double py, const double* xs,
                                const double* ys, std::size_t n) {
  const double inf = std::numeric_limits<double>::infinity();
  double acc[kLanes] = {inf, inf, inf, inf};
  const std::size_t main = n - n % kLanes;
  for (std::size_t i = 0; i < main; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) {
      const double dx = px - xs[i + l];
      const double dy = py - ys[i + l];
      const double d2 = dx * dx + dy * dy;
      if (d2 < acc[l]) acc[l] = d2;
    }
  }
  double best = acc[0] < acc[1] ? acc[0] : acc[1];
  const double best23 = acc[2] < acc[3] ? acc[2] : acc[3];
  if (best23 < best) best = best23;
  for (std::size_t i = main; i < n; ++i) {
    const double dx = px - xs[i];
    const double dy = py - ys[i];
    const double d2 = dx * dx + dy * dy;
    if (d2 < best) best = d2;
  }
  return best;
}

const Ops kScalarOps = {
    "scalar",          sum_scalar,
    dot_scalar,        sq_dist_scalar,
    weighted_sq_dist_scalar, gauss_transform_scalar,
    min_sq_point_dist_scalar,
};

std::atomic<const Ops*> g_active{nullptr};

const Ops* select_default() {
  if (const char* env = std::getenv("BOUNDWATCH_KERNELS")) {
    const std::string v(env);
    if (v == "scalar") return &scalar_ops();
    if (v == "avx2") {
      if (!avx2_available())
        throw std::runtime_error("BOUNDWATCH_KERNELS=avx2 but AVX2 is not available");
      return &avx2_ops();
    }
    if (!v.empty() && v != "auto")
      throw std::runtime_error("BOUNDWATCH_KERNELS: unknown backend '" + v + "'");
  }
  return avx2_available() ? &avx2_ops() : &scalar_ops();
}

}  // namespace

const Ops& scalar_ops() { return kScalarOps; }

const Ops& active() {
  const Ops* ops = g_active.load(std::memory_order_acquire);
  if (!ops) {
    ops = select_default();
    g_active.store(ops, std::memory_order_release);
  }
  return *ops;
}

void force_backend(Backend b) {
  switch (b) {
    case Backend::Auto:
      g_active.store(select_default(), std::memory_order_release);
      return;
    case Backend::Scalar:
      g_active.store(&scalar_ops(), std::memory_order_release);
      return;
    case Backend::Avx2:
      if (!avx2_available())
        throw std::runtime_error("AVX2 backend not available on this machine");
      g_active.store(&avx2_ops(), std::memory_order_release);
      return;
  }
  throw std::logic_error("unknown kernel backend");
}

}  // namespace boundwatch::kernels
