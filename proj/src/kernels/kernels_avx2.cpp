// AVX2+FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma; callers must gate on runtime CPU detection (see dispatch.cpp).

#include "egnn/kernels.hpp"

#if defined(EGNN_HAVE_X86)

#include <immintrin.h>

#include <cmath>
#include <cstdint>

namespace egnn::kernels {
namespace {

void axpy(double* y, double a, const double* x, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    __m256d vx = _mm256_loadu_pd(x + i);
    vy = _mm256_fmadd_pd(va, vx, vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void add(double* y, const double* x, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    __m256d vx = _mm256_loadu_pd(x + i);
    _mm256_storeu_pd(y + i, _mm256_add_pd(vy, vx));
  }
  for (; i < n; ++i) y[i] += x[i];
}

double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void scale(double* x, double a, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), va));
  }
  for (; i < n; ++i) x[i] *= a;
}

// exp over 4 double lanes, Cephes-style: x = n*ln2 + r, exp(x) = 2^n * exp(r),
// exp(r) from the rational approximation exp(r) = 1 + 2r*P(r^2) / (Q(r^2) - r*P(r^2)).
// Accurate to a few ulp over the non-overflowing range; saturates to 0 / +inf
// outside the same bounds as libm.
__m256d exp_pd(__m256d x) {
  const __m256d exp_hi = _mm256_set1_pd(709.437);
  const __m256d exp_lo = _mm256_set1_pd(-708.396);
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
  const __m256d c1 = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d c2 = _mm256_set1_pd(1.42860682030941723212e-6);

  const __m256d p0 = _mm256_set1_pd(1.26177193074810590878e-4);
  const __m256d p1 = _mm256_set1_pd(3.02994407707441961300e-2);
  const __m256d p2 = _mm256_set1_pd(9.99999999999999999910e-1);
  const __m256d q0 = _mm256_set1_pd(3.00198505138664455042e-6);
  const __m256d q1 = _mm256_set1_pd(2.52448340349684104192e-3);
  const __m256d q2 = _mm256_set1_pd(2.27265548208155028766e-1);
  const __m256d q3 = _mm256_set1_pd(2.00000000000000000005e0);

  const __m256d overflow = _mm256_cmp_pd(x, exp_hi, _CMP_GT_OQ);
  const __m256d underflow = _mm256_cmp_pd(x, exp_lo, _CMP_LT_OQ);
  x = _mm256_min_pd(_mm256_max_pd(x, exp_lo), exp_hi);

  // n = floor(x * log2(e) + 0.5)
  __m256d n = _mm256_floor_pd(_mm256_fmadd_pd(x, log2e, _mm256_set1_pd(0.5)));
  // r = x - n*ln2, split ln2 for extra precision
  __m256d r = _mm256_fnmadd_pd(n, c1, x);
  r = _mm256_fnmadd_pd(n, c2, r);

  const __m256d r2 = _mm256_mul_pd(r, r);
  __m256d p = p0;
  p = _mm256_fmadd_pd(p, r2, p1);
  p = _mm256_fmadd_pd(p, r2, p2);
  p = _mm256_mul_pd(p, r);
  __m256d q = q0;
  q = _mm256_fmadd_pd(q, r2, q1);
  q = _mm256_fmadd_pd(q, r2, q2);
  q = _mm256_fmadd_pd(q, r2, q3);
  // expr = 1 + 2p/(q - p)
  __m256d e = _mm256_div_pd(p, _mm256_sub_pd(q, p));
  e = _mm256_fmadd_pd(e, _mm256_set1_pd(2.0), _mm256_set1_pd(1.0));

  // scale by 2^n via exponent bits
  __m128i n32 = _mm256_cvtpd_epi32(n);
  __m256i n64 = _mm256_cvtepi32_epi64(n32);
  n64 = _mm256_add_epi64(n64, _mm256_set1_epi64x(1023));
  n64 = _mm256_slli_epi64(n64, 52);
  e = _mm256_mul_pd(e, _mm256_castsi256_pd(n64));

  e = _mm256_blendv_pd(e, _mm256_set1_pd(INFINITY), overflow);
  e = _mm256_blendv_pd(e, _mm256_setzero_pd(), underflow);
  return e;
}

void sigmoid(double* y, const double* x, std::size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vx = _mm256_loadu_pd(x + i);
    __m256d e = exp_pd(_mm256_sub_pd(_mm256_setzero_pd(), vx));
    _mm256_storeu_pd(y + i, _mm256_div_pd(one, _mm256_add_pd(one, e)));
  }
  for (; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void sigmoid_backward(double* g, const double* u, const double* y,
                      std::size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    __m256d vu = _mm256_loadu_pd(u + i);
    __m256d d = _mm256_mul_pd(vy, _mm256_sub_pd(one, vy));
    _mm256_storeu_pd(g + i, _mm256_mul_pd(vu, d));
  }
  for (; i < n; ++i) g[i] = u[i] * y[i] * (1.0 - y[i]);
}

void relu_inplace(double* x, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  }
  for (; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void shifted_gemv_t(double* y, const double* c, double shift, const double* W,
                    std::size_t rows, std::size_t p) {
  for (std::size_t j = 0; j < rows; ++j) {
    const double a = c[j] + shift;
    const __m256d va = _mm256_set1_pd(a);
    const double* wj = W + j * p;
    std::size_t t = 0;
    for (; t + 8 <= p; t += 8) {
      _mm256_storeu_pd(y + t, _mm256_fmadd_pd(va, _mm256_loadu_pd(wj + t),
                                              _mm256_loadu_pd(y + t)));
      _mm256_storeu_pd(
          y + t + 4, _mm256_fmadd_pd(va, _mm256_loadu_pd(wj + t + 4),
                                     _mm256_loadu_pd(y + t + 4)));
    }
    for (; t + 4 <= p; t += 4) {
      _mm256_storeu_pd(y + t, _mm256_fmadd_pd(va, _mm256_loadu_pd(wj + t),
                                              _mm256_loadu_pd(y + t)));
    }
    for (; t < p; ++t) y[t] += a * wj[t];
  }
}

void shifted_ger_gemv(double* Wg, double* up, const double* c, double shift,
                      const double* g, const double* W, std::size_t rows,
                      std::size_t p) {
  for (std::size_t j = 0; j < rows; ++j) {
    const double a = c[j] + shift;
    const __m256d va = _mm256_set1_pd(a);
    double* wgj = Wg + j * p;
    const double* wj = W + j * p;
    __m256d acc = _mm256_setzero_pd();
    std::size_t t = 0;
    for (; t + 4 <= p; t += 4) {
      const __m256d vg = _mm256_loadu_pd(g + t);
      _mm256_storeu_pd(wgj + t,
                       _mm256_fmadd_pd(va, vg, _mm256_loadu_pd(wgj + t)));
      acc = _mm256_fmadd_pd(_mm256_loadu_pd(wj + t), vg, acc);
    }
    double s = hsum(acc);
    for (; t < p; ++t) {
      wgj[t] += a * g[t];
      s += wj[t] * g[t];
    }
    up[j] = s;
  }
}

void adam_update(double* w, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bc1, double bc2) {
  const __m256d vb1 = _mm256_set1_pd(beta1);
  const __m256d vb2 = _mm256_set1_pd(beta2);
  const __m256d vob1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d vob2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d vlr = _mm256_set1_pd(lr);
  const __m256d veps = _mm256_set1_pd(eps);
  const __m256d vibc1 = _mm256_set1_pd(1.0 / bc1);
  const __m256d vibc2 = _mm256_set1_pd(1.0 / bc2);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vg = _mm256_loadu_pd(g + i);
    __m256d vm = _mm256_fmadd_pd(vob1, vg, _mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)));
    __m256d vv = _mm256_fmadd_pd(vob2, _mm256_mul_pd(vg, vg),
                                 _mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)));
    _mm256_storeu_pd(m + i, vm);
    _mm256_storeu_pd(v + i, vv);
    __m256d mhat = _mm256_mul_pd(vm, vibc1);
    __m256d vhat = _mm256_mul_pd(vv, vibc2);
    __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), veps);
    __m256d vw = _mm256_loadu_pd(w + i);
    vw = _mm256_sub_pd(vw, _mm256_div_pd(_mm256_mul_pd(vlr, mhat), denom));
    _mm256_storeu_pd(w + i, vw);
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
  }
}

}  // namespace

const Ops& avx2_ops() {
  static const Ops ops = {
      .name = "avx2",
      .axpy = axpy,
      .add = add,
      .dot = dot,
      .scale = scale,
      .sigmoid = sigmoid,
      .sigmoid_backward = sigmoid_backward,
      .relu_inplace = relu_inplace,
      .adam_update = adam_update,
      .shifted_gemv_t = shifted_gemv_t,
      .shifted_ger_gemv = shifted_ger_gemv,
  };
  return ops;
}

}  // namespace egnn::kernels

#endif  // EGNN_HAVE_X86
