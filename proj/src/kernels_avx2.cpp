// AVX2 kernel variants. This translation unit is compiled with -mavx2 and
// guarded at runtime by avx2_available(); nothing here executes unless the
// CPU reports AVX2.
//
// Each reduction mirrors the scalar backend's blocked schedule exactly:
// vector lane L accumulates elements L, L+4, ..., lanes combine as
// (l0+l1)+(l2+l3), tail elements fold in afterwards in index order. FMA is
// deliberately not used so that per-lane rounding matches the scalar
// mul-then-add sequence.

#include "boundwatch/kernels.hpp"

#if defined(__x86_64__) || defined(__i386__)
#define BOUNDWATCH_X86 1
#include <immintrin.h>
#else
#define BOUNDWATCH_X86 0
#endif

#include <limits>
#include <stdexcept>

namespace boundwatch::kernels {

#if BOUNDWATCH_X86

namespace {

inline double combine_sum(__m256d acc) {
  const __m128d lo = _mm256_castpd256_pd128(acc);
  const __m128d hi = _mm256_extractf128_pd(acc, 1);
  const double a0 = _mm_cvtsd_f64(lo);
  const double a1 = _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
  const double a2 = _mm_cvtsd_f64(hi);
  const double a3 = _mm_cvtsd_f64(_mm_unpackhi_pd(hi, hi));
  return (a0 + a1) + (a2 + a3);
}

inline double combine_min(__m256d acc) {
  const __m128d lo = _mm256_castpd256_pd128(acc);
  const __m128d hi = _mm256_extractf128_pd(acc, 1);
  const double a0 = _mm_cvtsd_f64(lo);
  const double a1 = _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
  const double a2 = _mm_cvtsd_f64(hi);
  const double a3 = _mm_cvtsd_f64(_mm_unpackhi_pd(hi, hi));
  double best = a0 < a1 ? a0 : a1;
  const double best23 = a2 < a3 ? a2 : a3;
  return best23 < best ? best23 : best;
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t main = n - n % kLanes;
  for (std::size_t i = 0; i < main; i += kLanes)
    acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = combine_sum(acc);
  for (std::size_t i = main; i < n; ++i) s += x[i];
  return s;
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t main = n - n % kLanes;
  for (std::size_t i = 0; i < main; i += kLanes) {
    const __m256d p = _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    acc = _mm256_add_pd(acc, p);
  }
  double s = combine_sum(acc);
  for (std::size_t i = main; i < n; ++i) s += x[i] * y[i];
  return s;
}

double sq_dist_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t main = n - n % kLanes;
  for (std::size_t i = 0; i < main; i += kLanes) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
  }
  double s = combine_sum(acc);
  for (std::size_t i = main; i < n; ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

double weighted_sq_dist_avx2(const double* x, const double* y, const double* w,
                             std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t main = n - n % kLanes;
  for (std::size_t i = 0; i < main; i += kLanes) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    const __m256d t = _mm256_mul_pd(_mm256_mul_pd(d, d), _mm256_loadu_pd(w + i));
    acc = _mm256_add_pd(acc, t);
  }
  double s = combine_sum(acc);
  for (std::size_t i = main; i < n; ++i) {
    const double d = x[i] - y[i];
    s += (d * d) * w[i];
  }
  return s;
}

void gauss_transform_avx2(const double* mu, const double* sigma,
                          const double* z, double* out, std::size_t n) {
  const std::size_t main = n - n % kLanes;
  for (std::size_t i = 0; i < main; i += kLanes) {
    const __m256d v = _mm256_add_pd(
        _mm256_loadu_pd(mu + i),
        _mm256_mul_pd(_mm256_loadu_pd(sigma + i), _mm256_loadu_pd(z + i)));
    _mm256_storeu_pd(out + i, v);
  }
  for (std::size_t i = main; i < n; ++i) out[i] = mu[i] + sigma[i] * z[i];
}

double min_sq_point_dist_avx2(double px, double py, const double* xs,
                              const double* ys, std::size_t n) {
  __m256d acc = _mm256_set1_pd(std::numeric_limits<double>::infinity());
  const __m256d vpx = _mm256_set1_pd(px);
  const __m256d vpy = _mm256_set1_pd(py);
  const std::size_t main = n - n % kLanes;
  for (std::size_t i = 0; i < main; i += kLanes) {
    const __m256d dx = _mm256_sub_pd(vpx, _mm256_loadu_pd(xs + i));
    const __m256d dy = _mm256_sub_pd(vpy, _mm256_loadu_pd(ys + i));
    const __m256d d2 = _mm256_add_pd(_mm256_mul_pd(dx, dx), _mm256_mul_pd(dy, dy));
    acc = _mm256_min_pd(acc, d2);
  }
  double best = combine_min(acc);
  for (std::size_t i = main; i < n; ++i) {
    const double dx = px - xs[i];
    const double dy = py - ys[i];
    const double d2 = dx * dx + dy * dy;
    if (d2 < best) best = d2;
  }
  return best;
}

const Ops kAvx2Ops = {
    "avx2",          sum_avx2,
    dot_avx2,        sq_dist_avx2,
    weighted_sq_dist_avx2, gauss_transform_avx2,
    min_sq_point_dist_avx2,
};

}  // namespace

bool avx2_available() {
  static const bool ok = __builtin_cpu_supports("avx2");
  return ok;
}

const Ops& avx2_ops() {
  if (!avx2_available())
    throw std::runtime_error("AVX2 kernels requested on a CPU without AVX2");
  return kAvx2Ops;
}

#else  // !BOUNDWATCH_X86

bool avx2_available() { return false; }

const Ops& avx2_ops() {
  throw std::runtime_error("AVX2 kernels are not built on this architecture");
}

#endif

}  // namespace boundwatch::kernels
