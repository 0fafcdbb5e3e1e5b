#include "egnn/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "egnn/errors.hpp"

namespace egnn {

namespace k = kernels;

DenseMatrix xavier_init(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0) throw ValidationError("xavier_init: empty shape");
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  DenseMatrix m(rows, cols);
  for (auto& v : m.values) v = rng.uniform(-bound, bound);
  return m;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : wt(xavier_init(in, out, rng)), b(1, out) {}

void Linear::forward(std::span<const double> x, std::span<double> out) const {
  if (x.size() != in_dim() || out.size() != out_dim()) {
    throw std::invalid_argument("Linear::forward: shape mismatch");
  }
  const auto& ops = k::active();
  std::copy(b.value.values.begin(), b.value.values.end(), out.begin());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double xj = x[j];
    if (xj == 0.0) continue;
    if (xj == 1.0) {
      ops.add(out.data(), wt.value[j], out.size());
    } else {
      ops.axpy(out.data(), xj, wt.value[j], out.size());
    }
  }
}

void Linear::accumulate_grad(std::span<const double> x,
                             std::span<const double> g) {
  if (x.size() != in_dim() || g.size() != out_dim()) {
    throw std::invalid_argument("Linear::accumulate_grad: shape mismatch");
  }
  const auto& ops = k::active();
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double xj = x[j];
    if (xj == 0.0) continue;
    if (xj == 1.0) {
      ops.add(wt.grad[j], g.data(), g.size());
    } else {
      ops.axpy(wt.grad[j], xj, g.data(), g.size());
    }
  }
  ops.add(b.grad.data(), g.data(), g.size());
}

void Linear::backward_input(std::span<const double> g,
                            std::span<double> gx) const {
  if (g.size() != out_dim() || gx.size() != in_dim()) {
    throw std::invalid_argument("Linear::backward_input: shape mismatch");
  }
  const auto& ops = k::active();
  for (std::size_t j = 0; j < gx.size(); ++j) {
    gx[j] = ops.dot(wt.value[j], g.data(), g.size());
  }
}

FusionHead::FusionHead(std::size_t width, Rng& rng)
    : w(xavier_init(1, width, rng)), b(1, 1) {}

double FusionHead::forward(std::span<const double> x) const {
  if (x.size() != width()) {
    throw std::invalid_argument("FusionHead::forward: shape mismatch");
  }
  return k::active().dot(w.value.data(), x.data(), x.size()) +
         b.value.values[0];
}

void FusionHead::accumulate_grad(std::span<const double> x, double g) {
  k::active().axpy(w.grad.data(), g, x.data(), x.size());
  b.grad.values[0] += g;
}

void FusionHead::backward_input(double g, std::span<double> gx) const {
  if (gx.size() != width()) {
    throw std::invalid_argument("FusionHead::backward_input: shape mismatch");
  }
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g * w.value.values[i];
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void sigmoid(std::span<const double> x, std::span<double> y) {
  k::active().sigmoid(y.data(), x.data(), x.size());
}

void sigmoid_backward(std::span<const double> u, std::span<const double> y,
                      std::span<double> g) {
  k::active().sigmoid_backward(g.data(), u.data(), y.data(), y.size());
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

void relu(std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = relu(x[i]);
}

void relu_backward(std::span<const double> u, std::span<const double> x,
                   std::span<double> g) {
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? u[i] : 0.0;
}

double softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

std::vector<double> dropout(std::span<const double> x, double rate,
                            bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ValidationError("dropout rate must lie in [0, 1)");
  }
  std::vector<double> out(x.begin(), x.end());
  if (!training || rate == 0.0) return out;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (auto& v : out) v = rng.bernoulli(rate) ? 0.0 : v * keep_scale;
  return out;
}

void dropout_inplace(std::span<double> x, double rate, Rng& rng,
                     std::span<double> mask) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ValidationError("dropout rate must lie in [0, 1)");
  }
  if (rate == 0.0) {
    std::fill(mask.begin(), mask.end(), 1.0);
    return;
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double factor = rng.bernoulli(rate) ? 0.0 : keep_scale;
    mask[i] = factor;
    x[i] *= factor;
  }
}

BceResult bce_loss(double y, double yhat) {
  const double yc = std::min(1.0 - kPredictionClamp,
                             std::max(kPredictionClamp, yhat));
  const double loss = -(y * std::log(yc) + (1.0 - y) * std::log(1.0 - yc));
  const double grad = (yc - y) / (yc * (1.0 - yc));
  return {loss, grad};
}

void Adam::step(std::span<Param* const> params) {
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Param* p : params) {
      m_.emplace_back(p->value.rows, p->value.cols);
      v_.emplace_back(p->value.rows, p->value.cols);
    }
  }
  if (m_.size() != params.size()) {
    throw std::invalid_argument("Adam::step: parameter set changed");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto& ops = k::active();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    if (!p.value.same_shape(m_[i])) {
      throw std::invalid_argument("Adam::step: parameter shape changed");
    }
    ops.adam_update(p.value.data(), m_[i].data(), v_[i].data(), p.grad.data(),
                    p.size(), lr_, beta1_, beta2_, eps_, bc1, bc2);
    p.zero_grad();
  }
}

void zero_grads(std::span<Param* const> params) {
  for (Param* p : params) p->zero_grad();
}

GradCheckReport grad_check(const std::function<double(bool with_grad)>& f,
                           std::span<Param* const> params, double step) {
  const double l0 = f(false);
  const double l1 = f(false);
  if (l0 != l1) {
    throw std::runtime_error(
        "grad_check: closure is non-deterministic (two evaluations differ)");
  }

  zero_grads(params);
  f(true);
  std::vector<DenseMatrix> analytic;
  analytic.reserve(params.size());
  for (const Param* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.value.values[i];
      p.value.values[i] = saved + step;
      const double lp = f(false);
      p.value.values[i] = saved - step;
      const double lm = f(false);
      p.value.values[i] = saved;
      const double numeric = (lp - lm) / (2.0 * step);
      const double a = analytic[pi].values[i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      report.max_rel_err =
          std::max(report.max_rel_err, std::abs(a - numeric) / denom);
      ++report.checked;
    }
  }
  return report;
}

}  // namespace egnn
