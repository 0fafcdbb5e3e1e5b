#pragma once
// Dense-network numerics: Xavier init, affine layers with explicit backward,
// activations, inverted dropout, BCE loss, Adam, and finite-difference
// gradient verification. No computation graph; the architectures here are
// fixed and shallow, so each layer exposes its own backward.

#include <functional>
#include <span>
#include <vector>

#include "egnn/kernels.hpp"
#include "egnn/matrix.hpp"
#include "egnn/rng.hpp"

namespace egnn {

// Entries uniform in +/- sqrt(6 / (rows + cols)).
DenseMatrix xavier_init(std::size_t rows, std::size_t cols, Rng& rng);

// y = W x + b for a logical W of shape (out, in). Weights are stored
// transposed (in x out) so that both the forward pass over sparse/binary
// inputs and the gradient accumulation run on contiguous rows.
struct Linear {
  Param wt;  // (in, out); wt.value[j] = weights from input j to every output
  Param b;   // (1, out)

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  std::size_t in_dim() const { return wt.value.rows; }
  std::size_t out_dim() const { return wt.value.cols; }

  // out = W x + b; skips zero inputs, so binary feature rows cost
  // O(nnz * out). x must have in_dim entries, out must have out_dim.
  void forward(std::span<const double> x, std::span<double> out) const;

  // Accumulates dL/dW += g x^T and dL/db += g for upstream gradient g
  // (g = dL/d(Wx+b), length out_dim).
  void accumulate_grad(std::span<const double> x, std::span<const double> g);

  // gx = W^T g, the gradient w.r.t. the layer input.
  void backward_input(std::span<const double> g, std::span<double> gx) const;
};

// Scalar-output affine head: yhat_pre = w . x + b.
struct FusionHead {
  Param w;  // (1, width)
  Param b;  // (1, 1)

  FusionHead() = default;
  FusionHead(std::size_t width, Rng& rng);

  std::size_t width() const { return w.value.cols; }
  double forward(std::span<const double> x) const;
  // accumulates gradients and returns nothing; gx (optional) receives g * w
  void accumulate_grad(std::span<const double> x, double g);
  void backward_input(double g, std::span<double> gx) const;
};

// Elementwise activations with explicit backward contracts.
double sigmoid(double x);
void sigmoid(std::span<const double> x, std::span<double> y);
// dL/dx = u * y * (1 - y), y being the forward output
void sigmoid_backward(std::span<const double> u, std::span<const double> y,
                      std::span<double> g);
double relu(double x);
void relu(std::span<const double> x, std::span<double> y);
// derivative 1 for x > 0, else 0 (0 at x = 0 by convention)
void relu_backward(std::span<const double> u, std::span<const double> x,
                   std::span<double> g);

double softplus(double x);  // log(1 + e^x), overflow-safe

// Inverted dropout. In training each entry is zeroed with probability rate
// and survivors are scaled by 1/(1-rate); at inference it is the identity.
std::vector<double> dropout(std::span<const double> x, double rate,
                            bool training, Rng& rng);
// In-place variant; mask receives the per-entry factor (0 or 1/(1-rate))
// so the backward pass can reuse it.
void dropout_inplace(std::span<double> x, double rate, Rng& rng,
                     std::span<double> mask);

// Binary cross-entropy on a prediction clamped to [1e-7, 1 - 1e-7].
inline constexpr double kPredictionClamp = 1e-7;
struct BceResult {
  double loss;
  double dloss_dyhat;
};
BceResult bce_loss(double y, double yhat);

// Adam with bias correction. Moment buffers are lazily shaped to the
// registered parameters; step() updates, increments t, and zeroes grads.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<Param* const> params);

  long t() const { return t_; }
  double lr() const { return lr_; }

  // Serialized moments, aligned with the param order used in step().
  const std::vector<DenseMatrix>& m() const { return m_; }
  const std::vector<DenseMatrix>& v() const { return v_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<DenseMatrix> m_, v_;
};

void zero_grads(std::span<Param* const> params);

// Optimizer state captured for checkpointing, aligned with the parameter
// order passed to Adam::step.
struct AdamSnapshot {
  long t = 0;
  std::vector<DenseMatrix> m, v;
};

// Central finite-difference verification of analytic gradients.
//
// The closure maps the current parameter values to a scalar loss; when
// with_grad is true it must also populate every param's grad (after the
// caller zeroed them). It must be deterministic: two evaluations at the
// same point have to return the identical value (dropout disabled).
//
// Error metric per partial: |analytic - numeric| / max(1, |analytic|,
// |numeric|) — relative error, floored to absolute for small gradients.
struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  bool pass(double tolerance) const { return max_rel_err <= tolerance; }
};

GradCheckReport grad_check(const std::function<double(bool with_grad)>& f,
                           std::span<Param* const> params,
                           double step = 1e-5);

}  // namespace egnn
