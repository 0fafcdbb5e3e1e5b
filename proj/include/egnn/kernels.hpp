#pragma once
// Vector kernels behind the training/inference inner loops.
//
// A scalar reference implementation always exists. On x86-64 an AVX2+FMA
// variant is selected at runtime when the CPU supports it; on aarch64 a
// NEON variant is used. Selection can be pinned with force() or the
// EGNN_KERNELS environment variable (values: scalar, avx2, neon, auto).
// All kernels use a fixed accumulation order, so results are reproducible
// for a given backend.

#include <cstddef>
#include <string>

namespace egnn::kernels {

enum class Backend { scalar, avx2, neon };

struct Ops {
  const char* name;
  // y += a * x
  void (*axpy)(double* y, double a, const double* x, std::size_t n);
  // y += x
  void (*add)(double* y, const double* x, std::size_t n);
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // x *= a
  void (*scale)(double* x, double a, std::size_t n);
  // y = 1 / (1 + exp(-x))
  void (*sigmoid)(double* y, const double* x, std::size_t n);
  // g = u * y * (1 - y), sigmoid backward given forward output y
  void (*sigmoid_backward)(double* g, const double* u, const double* y,
                           std::size_t n);
  // x = max(x, 0)
  void (*relu_inplace)(double* x, std::size_t n);
  // Adam update with bias corrections bc1 = 1-beta1^t, bc2 = 1-beta2^t:
  //   m = beta1*m + (1-beta1)*g
  //   v = beta2*v + (1-beta2)*g*g
  //   w -= lr * (m/bc1) / (sqrt(v/bc2) + eps)
  void (*adam_update)(double* w, double* m, double* v, const double* g,
                      std::size_t n, double lr, double beta1, double beta2,
                      double eps, double bc1, double bc2);
  // y[0..p) += sum_j (c[j] + shift) * W[j*p .. (j+1)*p), W row-major rows x p
  void (*shifted_gemv_t)(double* y, const double* c, double shift,
                         const double* W, std::size_t rows, std::size_t p);
  // one pass over W and Wg:
  //   Wg[j*p..] += (c[j] + shift) * g[0..p)
  //   up[j]      = dot(W[j*p..], g)
  void (*shifted_ger_gemv)(double* Wg, double* up, const double* c,
                           double shift, const double* g, const double* W,
                           std::size_t rows, std::size_t p);
};

// Reference backend, always available.
const Ops& scalar_ops();

// SIMD backend for the host ISA, or nullptr when the CPU lacks it.
const Ops* simd_ops();

// Currently selected backend (honors force() and EGNN_KERNELS).
const Ops& active();
Backend active_backend();

// Pin the backend; throws std::runtime_error if unavailable on this CPU.
void force(Backend b);
// Return to automatic detection.
void reset();

std::string backend_name(Backend b);

}  // namespace egnn::kernels
