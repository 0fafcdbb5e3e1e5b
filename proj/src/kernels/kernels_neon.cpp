// NEON kernel variants for aarch64. NEON is baseline on aarch64, so no
// runtime feature probe is needed. The sigmoid keeps libm exp per lane;
// the FMA-bound loops are vectorized.

#include "egnn/kernels.hpp"

#if defined(EGNN_HAVE_NEON)

#include <arm_neon.h>

#include <cmath>

namespace egnn::kernels {
namespace {

void axpy(double* y, double a, const double* x, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t vy = vld1q_f64(y + i);
    vy = vfmaq_f64(vy, va, vld1q_f64(x + i));
    vst1q_f64(y + i, vy);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void add(double* y, const double* x, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vld1q_f64(x + i)));
  }
  for (; i < n; ++i) y[i] += x[i];
}

double dot(const double* x, const double* y, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    acc = vfmaq_f64(acc, vld1q_f64(x + i), vld1q_f64(y + i));
  }
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void scale(double* x, double a, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(x + i, vmulq_f64(vld1q_f64(x + i), va));
  }
  for (; i < n; ++i) x[i] *= a;
}

void sigmoid(double* y, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void sigmoid_backward(double* g, const double* u, const double* y,
                      std::size_t n) {
  const float64x2_t one = vdupq_n_f64(1.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t vy = vld1q_f64(y + i);
    float64x2_t d = vmulq_f64(vy, vsubq_f64(one, vy));
    vst1q_f64(g + i, vmulq_f64(vld1q_f64(u + i), d));
  }
  for (; i < n; ++i) g[i] = u[i] * y[i] * (1.0 - y[i]);
}

void relu_inplace(double* x, std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(x + i, vmaxq_f64(vld1q_f64(x + i), zero));
  }
  for (; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void shifted_gemv_t(double* y, const double* c, double shift, const double* W,
                    std::size_t rows, std::size_t p) {
  for (std::size_t j = 0; j < rows; ++j) {
    const double a = c[j] + shift;
    const float64x2_t va = vdupq_n_f64(a);
    const double* wj = W + j * p;
    std::size_t t = 0;
    for (; t + 2 <= p; t += 2) {
      vst1q_f64(y + t, vfmaq_f64(vld1q_f64(y + t), va, vld1q_f64(wj + t)));
    }
    for (; t < p; ++t) y[t] += a * wj[t];
  }
}

void shifted_ger_gemv(double* Wg, double* up, const double* c, double shift,
                      const double* g, const double* W, std::size_t rows,
                      std::size_t p) {
  for (std::size_t j = 0; j < rows; ++j) {
    const double a = c[j] + shift;
    const float64x2_t va = vdupq_n_f64(a);
    double* wgj = Wg + j * p;
    const double* wj = W + j * p;
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t t = 0;
    for (; t + 2 <= p; t += 2) {
      const float64x2_t vg = vld1q_f64(g + t);
      vst1q_f64(wgj + t, vfmaq_f64(vld1q_f64(wgj + t), va, vg));
      acc = vfmaq_f64(acc, vld1q_f64(wj + t), vg);
    }
    double s = vaddvq_f64(acc);
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
  const float64x2_t vb1 = vdupq_n_f64(beta1);
  const float64x2_t vb2 = vdupq_n_f64(beta2);
  const float64x2_t vob1 = vdupq_n_f64(1.0 - beta1);
  const float64x2_t vob2 = vdupq_n_f64(1.0 - beta2);
  const float64x2_t vlr = vdupq_n_f64(lr);
  const float64x2_t veps = vdupq_n_f64(eps);
  const float64x2_t vibc1 = vdupq_n_f64(1.0 / bc1);
  const float64x2_t vibc2 = vdupq_n_f64(1.0 / bc2);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t vg = vld1q_f64(g + i);
    float64x2_t vm = vfmaq_f64(vmulq_f64(vb1, vld1q_f64(m + i)), vob1, vg);
    float64x2_t vv =
        vfmaq_f64(vmulq_f64(vb2, vld1q_f64(v + i)), vob2, vmulq_f64(vg, vg));
    vst1q_f64(m + i, vm);
    vst1q_f64(v + i, vv);
    float64x2_t mhat = vmulq_f64(vm, vibc1);
    float64x2_t vhat = vmulq_f64(vv, vibc2);
    float64x2_t denom = vaddq_f64(vsqrtq_f64(vhat), veps);
    float64x2_t vw = vld1q_f64(w + i);
    vw = vsubq_f64(vw, vdivq_f64(vmulq_f64(vlr, mhat), denom));
    vst1q_f64(w + i, vw);
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
  }
}

}  // namespace

const Ops& neon_ops() {
  static const Ops ops = {
      .name = "neon",
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

#endif  // EGNN_HAVE_NEON
