#pragma once

#include <cstddef>
#include <string_view>

namespace boundwatch::kernels {

// Width of the blocked accumulation scheme shared by every backend.
//
// Reduction contract: a reducing kernel keeps kLanes independent partial
// accumulators, lane L owning elements L, L+kLanes, L+2*kLanes, ...; the
// lanes are combined as (acc0+acc1)+(acc2+acc3) and any tail elements are
// folded in afterwards in index order. Scalar and SIMD backends follow the
// identical schedule, so their results are bit-equal, not merely close.
inline constexpr std::size_t kLanes = 4;

struct Ops {
  std::string_view name;

  // sum_i x[i]
  double (*sum)(const double* x, std::size_t n);
  // sum_i x[i]*y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // sum_i (x[i]-y[i])^2
  double (*sq_dist)(const double* x, const double* y, std::size_t n);
  // sum_i w[i]*(x[i]-y[i])^2, rounded as ((x-y)*(x-y))*w per element
  double (*weighted_sq_dist)(const double* x, const double* y,
                             const double* w, std::size_t n);
  // out[i] = mu[i] + sigma[i]*z[i]
  void (*gauss_transform)(const double* mu, const double* sigma,
                          const double* z, double* out, std::size_t n);
  // min_j (px-xs[j])^2 + (py-ys[j])^2; +inf when n == 0
  double (*min_sq_point_dist)(double px, double py, const double* xs,
                              const double* ys, std::size_t n);
};

enum class Backend { Auto, Scalar, Avx2 };

const Ops& scalar_ops();
bool avx2_available();
const Ops& avx2_ops();  // valid only when avx2_available()

// Backend in effect: BOUNDWATCH_KERNELS=scalar|avx2 overrides, otherwise the
// widest available instruction set. Selection is latched on first call.
const Ops& active();

// Test hook; overrides any earlier selection. Throws if the backend is
// unavailable on this machine.
void force_backend(Backend b);

}  // namespace boundwatch::kernels
