#include "egnn/kernels.hpp"

#include <cmath>

namespace egnn::kernels {
namespace {

void axpy(double* y, double a, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void add(double* y, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

double dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void scale(double* x, double a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void sigmoid(double* y, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void sigmoid_backward(double* g, const double* u, const double* y,
                      std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) g[i] = u[i] * y[i] * (1.0 - y[i]);
}

void relu_inplace(double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void adam_update(double* w, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bc1, double bc2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void shifted_gemv_t(double* y, const double* c, double shift, const double* W,
                    std::size_t rows, std::size_t p) {
  for (std::size_t j = 0; j < rows; ++j) {
    const double a = c[j] + shift;
    const double* wj = W + j * p;
    for (std::size_t t = 0; t < p; ++t) y[t] += a * wj[t];
  }
}

void shifted_ger_gemv(double* Wg, double* up, const double* c, double shift,
                      const double* g, const double* W, std::size_t rows,
                      std::size_t p) {
  for (std::size_t j = 0; j < rows; ++j) {
    const double a = c[j] + shift;
    double* wgj = Wg + j * p;
    const double* wj = W + j * p;
    double acc = 0.0;
    for (std::size_t t = 0; t < p; ++t) {
      wgj[t] += a * g[t];
      acc += wj[t] * g[t];
    }
    up[j] = acc;
  }
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops ops = {
      .name = "scalar",
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
