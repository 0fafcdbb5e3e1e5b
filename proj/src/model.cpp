#include "egnn/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

namespace egnn {

namespace k = kernels;
using nlohmann::json;

void TrainConfig::validate() const {
  if (lr < 0.0) throw ValidationError("lr must be nonnegative");
  if (epochs < 1) throw ValidationError("epochs must be at least 1");
  if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ValidationError("dropout must lie in [0, 1)");
  }
  if (dim < 1) throw ValidationError("dim must be at least 1");
  if (layers < 1) throw ValidationError("layers must be at least 1");
  if (variant_level < 1 || variant_level > 4) {
    throw ValidationError("variant must lie in 1..4");
  }
  if (cap_hidden < 0) throw ValidationError("cap_hidden must be nonnegative");
  if (latent_dim < 1) throw ValidationError("latent_dim must be at least 1");
  if (patience < 1) throw ValidationError("patience must be at least 1");
}

GateMode parse_gate_mode(const std::string& s) {
  if (s == "literal") return GateMode::literal_uniform;
  if (s == "norm") return GateMode::layer_norm_gated;
  throw ValidationError("unknown gate mode '" + s + "' (literal|norm)");
}

std::string gate_mode_name(GateMode g) {
  return g == GateMode::literal_uniform ? "literal" : "norm";
}

GnnChannel::GnnChannel(const ChannelConfig& config, Rng& rng) : cfg(config) {
  layers.reserve(cfg.layers);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    layers.emplace_back(cfg.in_dim, cfg.out_dim, rng);
  }
}

void GnnChannel::forward(std::span<const double> x, ChannelEval& ev) const {
  const std::size_t d = cfg.out_dim;
  const std::size_t l = cfg.layers;
  ev.h.resize(l * d);
  ev.gates.resize(l);
  ev.out.assign(d, 0.0);
  const auto& ops = k::active();

  for (std::size_t i = 0; i < l; ++i) {
    std::span<double> hi(ev.h.data() + i * d, d);
    layers[i].forward(x, hi);
    ops.sigmoid(hi.data(), hi.data(), d);
  }

  if (cfg.gate == GateMode::literal_uniform) {
    const double g = 1.0 / static_cast<double>(l);
    for (std::size_t i = 0; i < l; ++i) ev.gates[i] = g;
  } else {
    ev.norms.resize(l);
    double max_norm = -1.0;
    for (std::size_t i = 0; i < l; ++i) {
      const double* hi = ev.h.data() + i * d;
      ev.norms[i] = std::sqrt(ops.dot(hi, hi, d));
      max_norm = std::max(max_norm, ev.norms[i]);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < l; ++i) {
      ev.gates[i] = std::exp(ev.norms[i] - max_norm);
      sum += ev.gates[i];
    }
    for (std::size_t i = 0; i < l; ++i) ev.gates[i] /= sum;
  }

  for (std::size_t i = 0; i < l; ++i) {
    ops.axpy(ev.out.data(), ev.gates[i], ev.h.data() + i * d, d);
  }
}

void GnnChannel::apply_dropout(ChannelEval& ev, double rate, Rng& rng) const {
  ev.mask.resize(cfg.out_dim);
  dropout_inplace(ev.out, rate, rng, ev.mask);
}

void GnnChannel::backward(std::span<const double> x, const ChannelEval& ev,
                          std::span<const double> upstream, bool dropped_out,
                          std::span<double> scratch) {
  const std::size_t d = cfg.out_dim;
  const std::size_t l = cfg.layers;
  const auto& ops = k::active();
  std::span<double> u_eff = scratch.subspan(0, d);
  std::span<double> gz = scratch.subspan(d, d);

  if (dropped_out) {
    for (std::size_t t = 0; t < d; ++t) u_eff[t] = upstream[t] * ev.mask[t];
  } else {
    std::copy(upstream.begin(), upstream.end(), u_eff.begin());
  }

  if (cfg.gate == GateMode::literal_uniform) {
    for (std::size_t i = 0; i < l; ++i) {
      const double* hi = ev.h.data() + i * d;
      ops.sigmoid_backward(gz.data(), u_eff.data(), hi, d);
      ops.scale(gz.data(), ev.gates[i], d);
      layers[i].accumulate_grad(x, gz);
    }
    return;
  }

  // layer_norm_gated: x_mid = sum_i gate_i h_i with gate = softmax(|h|_2).
  // dL/dh_i = gate_i u + gate_i ((u.h_i) - sum_j gate_j (u.h_j)) h_i / |h_i|
  std::vector<double> dots(l);
  double s_dot = 0.0;
  for (std::size_t i = 0; i < l; ++i) {
    dots[i] = ops.dot(u_eff.data(), ev.h.data() + i * d, d);
    s_dot += ev.gates[i] * dots[i];
  }
  for (std::size_t i = 0; i < l; ++i) {
    const double* hi = ev.h.data() + i * d;
    const double norm = std::max(ev.norms[i], 1e-300);
    const double coef = ev.gates[i] * (dots[i] - s_dot) / norm;
    std::copy(hi, hi + d, gz.begin());
    ops.scale(gz.data(), coef, d);
    ops.axpy(gz.data(), ev.gates[i], u_eff.data(), d);
    ops.sigmoid_backward(gz.data(), gz.data(), hi, d);
    layers[i].accumulate_grad(x, gz);
  }
}

void GnnChannel::collect_params(std::vector<Param*>& out) {
  for (auto& layer : layers) {
    out.push_back(&layer.wt);
    out.push_back(&layer.b);
  }
}

std::vector<double> fuse(const std::vector<std::span<const double>>& parts) {
  std::size_t width = 0;
  for (const auto& p : parts) width += p.size();
  std::vector<double> fused;
  fused.reserve(width);
  for (const auto& p : parts) fused.insert(fused.end(), p.begin(), p.end());
  return fused;
}

EgnnModel::EgnnModel(const Dataset& ds, const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  variant_ = Variant{cfg.variant_level};
  gate_ = cfg.gate;
  d_ = cfg.dim;
  l_ = cfg.layers;
  cap_hidden_ = cfg.cap_hidden;

  const std::size_t d = static_cast<std::size_t>(d_);
  const std::size_t l = static_cast<std::size_t>(l_);
  const GateMode g = gate_;
  if (variant_.has_se()) {
    se_.emplace(ChannelConfig{ds.n_exercises, d, l, g}, rng);
  }
  if (variant_.has_sk()) {
    sk_.emplace(ChannelConfig{ds.n_concepts, d, l, g}, rng);
  }
  if (variant_.has_es()) {
    es_.emplace(ChannelConfig{ds.n_students, d, l, g}, rng);
  }
  if (variant_.has_ek()) {
    ek_.emplace(ChannelConfig{ds.n_concepts, d, l, g}, rng);
  }

  const std::size_t width = fused_width();
  // Projected gradient needs a feasible start: fold the Xavier draws of the
  // constrained prediction weights into the nonnegative orthant so no
  // coordinate begins clamped at zero.
  // The hidden CAP layer (when present) is parameterized on centered
  // inputs: z1 = W1 (fused - 1/2) + b1 and z2 = w2 (h - 1/2) + b2. The
  // function class and the monotonicity of the prediction in every fused
  // coordinate are unchanged (W1, w2 >= 0); only the optimization is
  // decoupled, since sigmoid outputs concentrate around 1/2 and purely
  // nonnegative weights would otherwise drag the pre-activation mean far
  // faster than a lone bias can track.
  if (cap_hidden_ > 0) {
    const std::size_t h = static_cast<std::size_t>(cap_hidden_);
    cap_ = Linear(width, h, rng);
    for (double& v : cap_.wt.value.values) v = std::abs(v);
    head_ = FusionHead(h, rng);
  } else {
    head_ = FusionHead(width, rng);
  }
  for (double& v : head_.w.value.values) v = std::abs(v);
}

std::vector<Param*> EgnnModel::params() {
  std::vector<Param*> out;
  if (se_) se_->collect_params(out);
  if (sk_) sk_->collect_params(out);
  if (es_) es_->collect_params(out);
  if (ek_) ek_->collect_params(out);
  if (cap_hidden_ > 0) {
    out.push_back(&cap_.wt);
    out.push_back(&cap_.b);
  }
  out.push_back(&head_.w);
  out.push_back(&head_.b);
  return out;
}

void EgnnModel::project_nonneg() {
  const auto& ops = k::active();
  if (cap_hidden_ > 0) {
    ops.relu_inplace(cap_.wt.value.data(), cap_.wt.value.size());
  }
  ops.relu_inplace(head_.w.value.data(), head_.w.value.size());
}

double EgnnModel::min_prediction_weight() const {
  double mn = std::numeric_limits<double>::infinity();
  if (cap_hidden_ > 0) {
    for (double v : cap_.wt.value.values) mn = std::min(mn, v);
  }
  for (double v : head_.w.value.values) mn = std::min(mn, v);
  return mn;
}

namespace {

// Per-side bookkeeping for one mini-batch: unique entities, their channel
// evaluations, and the summed prediction-path gradient per entity.
struct SideBatch {
  std::vector<std::size_t> unique;          // dense entity ids in the batch
  std::vector<std::int64_t> slot_of;        // entity id -> slot or -1
  std::vector<ChannelEval> eval_a, eval_b;  // first/second channel per side
  std::vector<double> part;                 // slots x P prediction partials
  std::vector<double> gz_sum;               // slots x P upstream sums

  void init(std::size_t n_entities) { slot_of.assign(n_entities, -1); }
  std::size_t intern(std::size_t id) {
    if (slot_of[id] >= 0) return static_cast<std::size_t>(slot_of[id]);
    const std::size_t slot = unique.size();
    slot_of[id] = static_cast<std::int64_t>(slot);
    unique.push_back(id);
    return slot;
  }
  void reset() {
    for (std::size_t id : unique) slot_of[id] = -1;
    unique.clear();
  }
};

}  // namespace

// Batched trainer. The prediction path from channel outputs to yhat is
// linear per entity-side up to the first nonlinearity, so each unique
// entity contributes a P-vector "part" (P = 1 for the plain affine head,
// P = cap_hidden for the hidden layer), and per-log work stays O(P).
struct EgnnTrainer {
  EgnnModel& model;
  const Dataset& ds;
  const FeatureMaps& fm;
  const TrainConfig& cfg;

  std::size_t d = 0;
  std::size_t p = 0;  // prediction-partial width
  // prediction weights viewed as a (fused_width x P) row-major matrix
  Param* pw = nullptr;
  std::size_t off_se = 0, off_sk = 0, off_es = 0, off_ek = 0;

  TrainResult run(std::span<const std::size_t> train_idx) {
    cfg.validate();
    d = static_cast<std::size_t>(model.d_);
    const bool cap = model.cap_hidden_ > 0;
    p = cap ? static_cast<std::size_t>(model.cap_hidden_) : 1;
    pw = cap ? &model.cap_.wt : &model.head_.w;
    const Variant var = model.variant_;
    off_se = 0;
    off_sk = d;
    off_es = var.has_sk() ? 2 * d : d;
    off_ek = off_es + d;

    const bool training_dropout = cfg.dropout > 0.0;
    Rng root(cfg.seed);
    Rng rng_shuffle = root.derive(1);
    Rng rng_dropout = root.derive(2);

    std::vector<Param*> params = model.params();
    Adam adam(cfg.lr);

    std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
    if (order.empty()) throw ValidationError("train: empty training set");

    SideBatch students, exercises;
    students.init(ds.n_students);
    exercises.init(ds.n_exercises);
    std::vector<double> scratch(2 * d);
    std::vector<double> h_buf;  // per-log hidden activations (cap mode)
    std::vector<double> zh(p), gzh(p), gb1_sum(p);

    TrainResult result;
    result.min_head_weight = std::numeric_limits<double>::infinity();
    double prev_loss = std::numeric_limits<double>::infinity();
    int stall_streak = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      rng_shuffle.shuffle(order);
      double loss_sum = 0.0;

      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(
            order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        const std::size_t batch_n = end - start;
        const double inv_batch = 1.0 / static_cast<double>(batch_n);

        students.reset();
        exercises.reset();
        for (std::size_t i = start; i < end; ++i) {
          const ResponseLog& log = ds.logs[order[i]];
          students.intern(log.student);
          if (var.has_exercise_side()) exercises.intern(log.exercise);
        }

        forward_side(students, true, training_dropout, rng_dropout);
        compute_parts(students, true);
        if (var.has_exercise_side()) {
          forward_side(exercises, false, training_dropout, rng_dropout);
          compute_parts(exercises, false);
        }

        const auto& ops = k::active();
        double gz_scalar_total = 0.0;
        double w2_sum = 0.0;
        if (cap) {
          h_buf.resize(batch_n * p);
          std::fill(gzh.begin(), gzh.end(), 0.0);
          std::fill(gb1_sum.begin(), gb1_sum.end(), 0.0);
          for (std::size_t t = 0; t < p; ++t) {
            w2_sum += model.head_.w.value.values[t];
          }
        }

        for (std::size_t i = start; i < end; ++i) {
          const ResponseLog& log = ds.logs[order[i]];
          const std::size_t ss =
              static_cast<std::size_t>(students.slot_of[log.student]);
          std::size_t es_slot = 0;
          const double y = static_cast<double>(label_of(log.score));

          if (!cap) {
            double z = students.part[ss] + model.head_.b.value.values[0];
            if (var.has_exercise_side()) {
              es_slot =
                  static_cast<std::size_t>(exercises.slot_of[log.exercise]);
              z += exercises.part[es_slot];
            }
            const double yhat = sigmoid(z);
            const BceResult bce = bce_loss(y, yhat);
            loss_sum += bce.loss;
            const double gz =
                bce.dloss_dyhat * yhat * (1.0 - yhat) * inv_batch;
            students.gz_sum[ss] += gz;
            if (var.has_exercise_side()) exercises.gz_sum[es_slot] += gz;
            gz_scalar_total += gz;
            continue;
          }

          // hidden CAP layer
          std::copy(model.cap_.b.value.values.begin(),
                    model.cap_.b.value.values.end(), zh.begin());
          ops.add(zh.data(), students.part.data() + ss * p, p);
          if (var.has_exercise_side()) {
            es_slot =
                static_cast<std::size_t>(exercises.slot_of[log.exercise]);
            ops.add(zh.data(), exercises.part.data() + es_slot * p, p);
          }
          double* h = h_buf.data() + (i - start) * p;
          ops.sigmoid(h, zh.data(), p);
          const double z2 =
              ops.dot(model.head_.w.value.data(), h, p) - 0.5 * w2_sum +
              model.head_.b.value.values[0];
          const double yhat = sigmoid(z2);
          const BceResult bce = bce_loss(y, yhat);
          loss_sum += bce.loss;
          const double gz2 = bce.dloss_dyhat * yhat * (1.0 - yhat) * inv_batch;
          gz_scalar_total += gz2;
          ops.axpy(model.head_.w.grad.data(), gz2, h, p);
          // gzh = gz2 * w2 elementwise through the hidden sigmoid
          for (std::size_t t = 0; t < p; ++t) {
            gzh[t] = gz2 * model.head_.w.value.values[t];
          }
          ops.sigmoid_backward(gzh.data(), gzh.data(), h, p);
          ops.add(gb1_sum.data(), gzh.data(), p);
          ops.add(students.gz_sum.data() + ss * p, gzh.data(), p);
          if (var.has_exercise_side()) {
            ops.add(exercises.gz_sum.data() + es_slot * p, gzh.data(), p);
          }
        }

        model.head_.b.grad.values[0] += gz_scalar_total;
        if (cap) {
          // centered output inputs: grad w2 = sum gz2 (h - 1/2)
          for (std::size_t t = 0; t < p; ++t) {
            model.head_.w.grad.values[t] -= 0.5 * gz_scalar_total;
          }
          ops.add(model.cap_.b.grad.data(), gb1_sum.data(), p);
        }

        backward_side(students, true, training_dropout, scratch);
        if (var.has_exercise_side()) {
          backward_side(exercises, false, training_dropout, scratch);
        }

        adam.step(params);
        model.project_nonneg();
        result.min_head_weight =
            std::min(result.min_head_weight, model.min_prediction_weight());
      }

      const double epoch_loss = loss_sum / static_cast<double>(order.size());
      if (!std::isfinite(epoch_loss)) {
        throw std::runtime_error("train: non-finite epoch loss");
      }
      result.epoch_losses.push_back(epoch_loss);
      result.epochs_run = epoch + 1;

      if (prev_loss - epoch_loss < cfg.min_improvement) {
        if (++stall_streak >= cfg.patience) {
          result.early_stopped = true;
          break;
        }
      } else {
        stall_streak = 0;
      }
      prev_loss = epoch_loss;
    }

    result.adam = AdamSnapshot{adam.t(), adam.m(), adam.v()};
    return result;
  }

  void forward_side(SideBatch& side, bool is_student, bool training_dropout,
                    Rng& rng_dropout) {
    GnnChannel* a = is_student ? (model.se_ ? &*model.se_ : nullptr)
                               : (model.es_ ? &*model.es_ : nullptr);
    GnnChannel* b = is_student ? (model.sk_ ? &*model.sk_ : nullptr)
                               : (model.ek_ ? &*model.ek_ : nullptr);
    if (side.eval_a.size() < side.unique.size()) {
      side.eval_a.resize(side.unique.size());
      side.eval_b.resize(side.unique.size());
    }
    side.gz_sum.assign(side.unique.size() * p, 0.0);
    for (std::size_t slot = 0; slot < side.unique.size(); ++slot) {
      const std::size_t id = side.unique[slot];
      if (a != nullptr) {
        const auto row = is_student ? fm.x_se.row(id) : fm.x_es.row(id);
        a->forward(row, side.eval_a[slot]);
        if (training_dropout) {
          a->apply_dropout(side.eval_a[slot], cfg.dropout, rng_dropout);
        }
      }
      if (b != nullptr) {
        const auto row = is_student ? fm.x_sk.row(id) : fm.x_ek.row(id);
        b->forward(row, side.eval_b[slot]);
        if (training_dropout) {
          b->apply_dropout(side.eval_b[slot], cfg.dropout, rng_dropout);
        }
      }
    }
  }

  // part[slot] = P-vector: sum over this side's fused coordinates j of
  // out_j * PW[j], PW being the first prediction layer's weight rows.
  void compute_parts(SideBatch& side, bool is_student) {
    const auto& ops = k::active();
    const bool has_b =
        is_student ? model.sk_.has_value() : model.ek_.has_value();
    const std::size_t oa = is_student ? off_se : off_es;
    const std::size_t ob = is_student ? off_sk : off_ek;
    side.part.assign(side.unique.size() * p, 0.0);
    const double* w = pw->value.data();
    for (std::size_t slot = 0; slot < side.unique.size(); ++slot) {
      double* part = side.part.data() + slot * p;
      if (p == 1) {
        part[0] = ops.dot(w + oa, side.eval_a[slot].out.data(), d);
        if (has_b) part[0] += ops.dot(w + ob, side.eval_b[slot].out.data(), d);
        continue;
      }
      // hidden CAP consumes centered inputs (out - 1/2)
      ops.shifted_gemv_t(part, side.eval_a[slot].out.data(), -0.5,
                         w + oa * p, d, p);
      if (has_b) {
        ops.shifted_gemv_t(part, side.eval_b[slot].out.data(), -0.5,
                           w + ob * p, d, p);
      }
    }
  }

  void backward_side(SideBatch& side, bool is_student, bool training_dropout,
                     std::span<double> scratch) {
    const auto& ops = k::active();
    GnnChannel* a = is_student ? (model.se_ ? &*model.se_ : nullptr)
                               : (model.es_ ? &*model.es_ : nullptr);
    GnnChannel* b = is_student ? (model.sk_ ? &*model.sk_ : nullptr)
                               : (model.ek_ ? &*model.ek_ : nullptr);
    const std::size_t oa = is_student ? off_se : off_es;
    const std::size_t ob = is_student ? off_sk : off_ek;
    const double* w = pw->value.data();
    double* wgrad = pw->grad.data();
    std::vector<double> upstream(d);

    for (std::size_t slot = 0; slot < side.unique.size(); ++slot) {
      const double* gz = side.gz_sum.data() + slot * p;
      const std::size_t id = side.unique[slot];
      auto do_channel = [&](GnnChannel* ch, std::size_t off,
                            const ChannelEval& ev,
                            std::span<const double> row) {
        const double* out = ev.out.data();
        if (p == 1) {
          ops.axpy(wgrad + off, gz[0], out, d);
          for (std::size_t t = 0; t < d; ++t) {
            upstream[t] = gz[0] * w[off + t];
          }
        } else {
          ops.shifted_ger_gemv(wgrad + off * p, upstream.data(), out, -0.5,
                               gz, w + off * p, d, p);
        }
        ch->backward(row, ev, upstream, training_dropout, scratch);
      };
      if (a != nullptr) {
        do_channel(a, oa, side.eval_a[slot],
                   is_student ? fm.x_se.row(id) : fm.x_es.row(id));
      }
      if (b != nullptr) {
        do_channel(b, ob, side.eval_b[slot],
                   is_student ? fm.x_sk.row(id) : fm.x_ek.row(id));
      }
    }
  }
};

TrainResult EgnnModel::train(const Dataset& ds, const FeatureMaps& fm,
                             std::span<const std::size_t> train_log_indices,
                             const TrainConfig& cfg) {
  EgnnTrainer trainer{*this, ds, fm, cfg};
  return trainer.run(train_log_indices);
}

namespace {

struct InferenceCache {
  // per entity: prediction-path partials, computed lazily
  std::vector<double> part;
  std::vector<char> ready;

  void init(std::size_t n, std::size_t p) {
    part.assign(n * p, 0.0);
    ready.assign(n, 0);
  }
};

}  // namespace

// Inference-side partial for one entity: P-vector of first prediction
// layer contributions from this side's channels.
void EgnnModel::entity_part(const FeatureMaps& fm, bool is_student,
                            std::size_t id, double* part) const {
  const std::size_t d = static_cast<std::size_t>(d_);
  const std::size_t p =
      cap_hidden_ > 0 ? static_cast<std::size_t>(cap_hidden_) : 1;
  const auto& ops = k::active();
  const double* w =
      cap_hidden_ > 0 ? cap_.wt.value.data() : head_.w.value.data();
  const std::size_t off_es_ = variant_.has_sk() ? 2 * d : d;

  const GnnChannel* a = is_student ? (se_ ? &*se_ : nullptr)
                                   : (es_ ? &*es_ : nullptr);
  const GnnChannel* b = is_student ? (sk_ ? &*sk_ : nullptr)
                                   : (ek_ ? &*ek_ : nullptr);
  const std::size_t oa = is_student ? 0 : off_es_;
  const std::size_t ob = is_student ? d : off_es_ + d;

  std::fill(part, part + p, 0.0);
  ChannelEval ev;
  if (a != nullptr) {
    a->forward(is_student ? fm.x_se.row(id) : fm.x_es.row(id), ev);
    if (p == 1) {
      part[0] += ops.dot(w + oa, ev.out.data(), d);
    } else {
      ops.shifted_gemv_t(part, ev.out.data(), -0.5, w + oa * p, d, p);
    }
  }
  if (b != nullptr) {
    b->forward(is_student ? fm.x_sk.row(id) : fm.x_ek.row(id), ev);
    if (p == 1) {
      part[0] += ops.dot(w + ob, ev.out.data(), d);
    } else {
      ops.shifted_gemv_t(part, ev.out.data(), -0.5, w + ob * p, d, p);
    }
  }
}

std::vector<double> EgnnModel::predict_all(
    const FeatureMaps& fm,
    std::span<const std::pair<std::size_t, std::size_t>> pairs) const {
  const std::size_t p =
      cap_hidden_ > 0 ? static_cast<std::size_t>(cap_hidden_) : 1;
  const auto& ops = k::active();

  InferenceCache students, exercises;
  students.init(fm.x_se.rows, p);
  exercises.init(fm.x_es.rows, p);

  double w2_sum = 0.0;
  if (cap_hidden_ > 0) {
    for (std::size_t t = 0; t < p; ++t) w2_sum += head_.w.value.values[t];
  }
  std::vector<double> zh(p), h(p);
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& [n, m] : pairs) {
    if (n >= fm.x_se.rows || m >= fm.x_es.rows) {
      throw std::out_of_range("predict_all: index out of range");
    }
    if (!students.ready[n]) {
      entity_part(fm, true, n, students.part.data() + n * p);
      students.ready[n] = 1;
    }
    if (variant_.has_exercise_side() && !exercises.ready[m]) {
      entity_part(fm, false, m, exercises.part.data() + m * p);
      exercises.ready[m] = 1;
    }

    if (cap_hidden_ == 0) {
      double z = students.part[n] + head_.b.value.values[0];
      if (variant_.has_exercise_side()) z += exercises.part[m];
      out.push_back(sigmoid(z));
      continue;
    }
    std::copy(cap_.b.value.values.begin(), cap_.b.value.values.end(),
              zh.begin());
    ops.add(zh.data(), students.part.data() + n * p, p);
    if (variant_.has_exercise_side()) {
      ops.add(zh.data(), exercises.part.data() + m * p, p);
    }
    ops.sigmoid(h.data(), zh.data(), p);
    const double z2 = ops.dot(head_.w.value.data(), h.data(), p) -
                      0.5 * w2_sum + head_.b.value.values[0];
    out.push_back(sigmoid(z2));
  }
  return out;
}

double EgnnModel::predict_one(const FeatureMaps& fm, std::size_t student,
                              std::size_t exercise) const {
  const std::pair<std::size_t, std::size_t> pair{student, exercise};
  return predict_all(fm, std::span(&pair, 1)).front();
}

double EgnnModel::batch_loss(const Dataset& ds, const FeatureMaps& fm,
                             std::span<const std::size_t> log_indices) const {
  if (log_indices.empty()) throw ValidationError("batch_loss: empty batch");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(log_indices.size());
  for (std::size_t idx : log_indices) {
    pairs.emplace_back(ds.logs[idx].student, ds.logs[idx].exercise);
  }
  const std::vector<double> yhat = predict_all(fm, pairs);
  double sum = 0.0;
  for (std::size_t i = 0; i < log_indices.size(); ++i) {
    const double y =
        static_cast<double>(label_of(ds.logs[log_indices[i]].score));
    sum += bce_loss(y, yhat[i]).loss;
  }
  return sum / static_cast<double>(log_indices.size());
}

double EgnnModel::loss_and_grads(const Dataset& ds, const FeatureMaps& fm,
                                 std::span<const std::size_t> log_indices) {
  if (log_indices.empty()) throw ValidationError("loss_and_grads: empty batch");
  const std::size_t d = static_cast<std::size_t>(d_);
  const auto& ops = k::active();
  const double inv_n = 1.0 / static_cast<double>(log_indices.size());
  const std::size_t width = fused_width();

  std::vector<double> scratch(2 * d);
  std::vector<double> gfused(width);
  double loss_sum = 0.0;

  for (std::size_t idx : log_indices) {
    const ResponseLog& log = ds.logs[idx];
    const RowViews rows = row_views(fm, log.student, log.exercise);

    // forward: channels, concatenation, prediction path
    std::array<ChannelEval, 4> evals;
    std::vector<double> fused;
    fused.reserve(width);
    auto run_channel = [&](const std::optional<GnnChannel>& ch, int slot,
                           std::span<const double> row) {
      if (!ch) return;
      ch->forward(row, evals[static_cast<std::size_t>(slot)]);
      const auto& out = evals[static_cast<std::size_t>(slot)].out;
      fused.insert(fused.end(), out.begin(), out.end());
    };
    run_channel(se_, 0, rows.se);
    run_channel(sk_, 1, rows.sk);
    run_channel(es_, 2, rows.es);
    run_channel(ek_, 3, rows.ek);

    double yhat;
    std::vector<double> h_c;  // centered hidden activations (cap mode)
    std::vector<double> fused_c;
    if (cap_hidden_ > 0) {
      const std::size_t p = static_cast<std::size_t>(cap_hidden_);
      fused_c.assign(fused.begin(), fused.end());
      for (double& v : fused_c) v -= 0.5;
      std::vector<double> zh(p);
      cap_.forward(fused_c, zh);
      h_c.resize(p);
      ops.sigmoid(h_c.data(), zh.data(), p);
      for (double& v : h_c) v -= 0.5;
      yhat = sigmoid(head_.forward(h_c));
    } else {
      yhat = sigmoid(head_.forward(fused));
    }

    const double y = static_cast<double>(label_of(log.score));
    const BceResult bce = bce_loss(y, yhat);
    loss_sum += bce.loss;
    const double gz2 = bce.dloss_dyhat * yhat * (1.0 - yhat) * inv_n;

    // backward through the prediction path to dL/dfused
    if (cap_hidden_ > 0) {
      const std::size_t p = static_cast<std::size_t>(cap_hidden_);
      head_.accumulate_grad(h_c, gz2);
      std::vector<double> gzh(p), h(p);
      for (std::size_t t = 0; t < p; ++t) h[t] = h_c[t] + 0.5;
      head_.backward_input(gz2, gzh);
      ops.sigmoid_backward(gzh.data(), gzh.data(), h.data(), p);
      cap_.accumulate_grad(fused_c, gzh);
      cap_.backward_input(gzh, gfused);
    } else {
      head_.accumulate_grad(fused, gz2);
      head_.backward_input(gz2, gfused);
    }

    // split dL/dfused back into per-channel upstreams
    std::size_t off = 0;
    auto back_channel = [&](std::optional<GnnChannel>& ch, int slot,
                            std::span<const double> row) {
      if (!ch) return;
      std::span<const double> upstream(gfused.data() + off, d);
      ch->backward(row, evals[static_cast<std::size_t>(slot)], upstream,
                   /*dropped_out=*/false, scratch);
      off += d;
    };
    back_channel(se_, 0, rows.se);
    back_channel(sk_, 1, rows.sk);
    back_channel(es_, 2, rows.es);
    back_channel(ek_, 3, rows.ek);
  }
  return loss_sum * inv_n;
}

std::vector<double> EgnnModel::fused_vector(const FeatureMaps& fm,
                                            std::size_t student,
                                            std::size_t exercise) const {
  const RowViews rows = row_views(fm, student, exercise);
  std::vector<std::span<const double>> parts;
  std::vector<ChannelEval> evals(4);
  if (se_) {
    se_->forward(rows.se, evals[0]);
    parts.emplace_back(evals[0].out);
  }
  if (sk_) {
    sk_->forward(rows.sk, evals[1]);
    parts.emplace_back(evals[1].out);
  }
  if (es_) {
    es_->forward(rows.es, evals[2]);
    parts.emplace_back(evals[2].out);
  }
  if (ek_) {
    ek_->forward(rows.ek, evals[3]);
    parts.emplace_back(evals[3].out);
  }
  return fuse(parts);
}

double EgnnModel::predict_fused(std::span<const double> fused) const {
  if (cap_hidden_ == 0) return sigmoid(head_.forward(fused));
  const std::size_t p = static_cast<std::size_t>(cap_hidden_);
  std::vector<double> fused_c(fused.begin(), fused.end());
  for (double& v : fused_c) v -= 0.5;
  std::vector<double> zh(p), h(p);
  cap_.forward(fused_c, zh);
  k::active().sigmoid(h.data(), zh.data(), p);
  for (double& v : h) v -= 0.5;
  return sigmoid(head_.forward(h));
}

std::vector<double> EgnnModel::mastery_profile(const FeatureMaps& fm,
                                               std::size_t student) const {
  if (!ek_) {
    throw ValidationError(
        "mastery_profile requires the exercise-concept channel (variant 4)");
  }
  if (student >= fm.x_se.rows) {
    throw std::out_of_range("mastery_profile: student index out of range");
  }
  const std::size_t n_concepts = fm.x_ek.cols;
  std::vector<double> profile(n_concepts);
  std::vector<double> fused = fused_vector(fm, student, 0);
  const std::size_t d = static_cast<std::size_t>(d_);

  // probe exercise: zero exercise-student row, one-hot concept row
  const std::vector<double> zero_row(fm.x_es.cols, 0.0);
  ChannelEval ev;
  es_->forward(zero_row, ev);
  std::copy(ev.out.begin(), ev.out.end(), fused.begin() + 2 * d);

  std::vector<double> probe(n_concepts, 0.0);
  for (std::size_t c = 0; c < n_concepts; ++c) {
    probe[c] = 1.0;
    ek_->forward(probe, ev);
    probe[c] = 0.0;
    std::copy(ev.out.begin(), ev.out.end(), fused.begin() + 3 * d);
    profile[c] = predict_fused(fused);
  }
  return profile;
}

namespace {

json matrix_to_json(const DenseMatrix& m) {
  return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.values}};
}

DenseMatrix matrix_from_json(const json& j) {
  DenseMatrix m(j.at("rows").get<std::size_t>(),
                j.at("cols").get<std::size_t>());
  m.values = j.at("data").get<std::vector<double>>();
  if (m.values.size() != m.rows * m.cols) {
    throw ValidationError("checkpoint: matrix size mismatch");
  }
  if (!m.all_finite()) {
    throw ValidationError("checkpoint: non-finite parameter value");
  }
  return m;
}

}  // namespace

std::string EgnnModel::checkpoint_json(const TrainConfig& cfg,
                                       std::uint64_t id_map_hash) const {
  json j;
  j["format"] = "egnncd-checkpoint-v1";
  j["kind"] = "egnn";
  j["variant"] = variant_.level;
  j["gate"] = gate_mode_name(gate_);
  j["dim"] = d_;
  j["layers"] = l_;
  j["cap_hidden"] = cap_hidden_;
  j["seed"] = cfg.seed;
  j["id_map_hash"] = id_map_hash;
  j["config"] = {{"lr", cfg.lr},
                 {"epochs", cfg.epochs},
                 {"batch_size", cfg.batch_size},
                 {"dropout", cfg.dropout}};

  json params = json::object();
  auto dump_channel = [&](const char* name,
                          const std::optional<GnnChannel>& ch) {
    if (!ch) return;
    for (std::size_t i = 0; i < ch->layers.size(); ++i) {
      params[std::string(name) + ".l" + std::to_string(i) + ".wt"] =
          matrix_to_json(ch->layers[i].wt.value);
      params[std::string(name) + ".l" + std::to_string(i) + ".b"] =
          matrix_to_json(ch->layers[i].b.value);
    }
  };
  dump_channel("se", se_);
  dump_channel("sk", sk_);
  dump_channel("es", es_);
  dump_channel("ek", ek_);
  if (cap_hidden_ > 0) {
    params["cap.wt"] = matrix_to_json(cap_.wt.value);
    params["cap.b"] = matrix_to_json(cap_.b.value);
  }
  params["head.w"] = matrix_to_json(head_.w.value);
  params["head.b"] = matrix_to_json(head_.b.value);
  j["params"] = std::move(params);
  return j.dump();
}

EgnnModel EgnnModel::from_checkpoint_json(
    const std::string& text, std::optional<std::uint64_t> expect_id_map_hash) {
  json j = json::parse(text);
  if (j.at("format") != "egnncd-checkpoint-v1" || j.at("kind") != "egnn") {
    throw ValidationError("checkpoint: unexpected format or kind");
  }
  if (expect_id_map_hash.has_value()) {
    const auto stored = j.at("id_map_hash").get<std::uint64_t>();
    if (stored != *expect_id_map_hash) {
      throw ValidationError(
          "checkpoint: id map hash mismatch; dataset incompatible");
    }
  }

  EgnnModel model;
  model.variant_ = Variant{j.at("variant").get<int>()};
  model.gate_ = parse_gate_mode(j.at("gate").get<std::string>());
  model.d_ = j.at("dim").get<int>();
  model.l_ = j.at("layers").get<int>();
  model.cap_hidden_ = j.value("cap_hidden", 0);

  const json& params = j.at("params");
  auto load_channel = [&](const char* name, std::optional<GnnChannel>& ch,
                          bool present) {
    if (!present) return;
    ch.emplace();
    ch->cfg.out_dim = static_cast<std::size_t>(model.d_);
    ch->cfg.layers = static_cast<std::size_t>(model.l_);
    ch->cfg.gate = model.gate_;
    for (int i = 0; i < model.l_; ++i) {
      const std::string base = std::string(name) + ".l" + std::to_string(i);
      Linear layer;
      layer.wt = Param(matrix_from_json(params.at(base + ".wt")));
      layer.b = Param(matrix_from_json(params.at(base + ".b")));
      if (layer.b.value.cols != layer.wt.value.cols) {
        throw ValidationError("checkpoint: layer shape mismatch");
      }
      ch->cfg.in_dim = layer.wt.value.rows;
      ch->layers.push_back(std::move(layer));
    }
  };
  load_channel("se", model.se_, model.variant_.has_se());
  load_channel("sk", model.sk_, model.variant_.has_sk());
  load_channel("es", model.es_, model.variant_.has_es());
  load_channel("ek", model.ek_, model.variant_.has_ek());
  if (model.cap_hidden_ > 0) {
    model.cap_.wt = Param(matrix_from_json(params.at("cap.wt")));
    model.cap_.b = Param(matrix_from_json(params.at("cap.b")));
    if (model.cap_.wt.value.rows != model.fused_width() ||
        model.cap_.wt.value.cols !=
            static_cast<std::size_t>(model.cap_hidden_)) {
      throw ValidationError("checkpoint: cap layer shape mismatch");
    }
  }
  model.head_.w = Param(matrix_from_json(params.at("head.w")));
  model.head_.b = Param(matrix_from_json(params.at("head.b")));
  const std::size_t expect_width =
      model.cap_hidden_ > 0 ? static_cast<std::size_t>(model.cap_hidden_)
                            : model.fused_width();
  if (model.head_.w.value.cols != expect_width) {
    throw ValidationError("checkpoint: fusion width mismatch");
  }
  return model;
}

}  // namespace egnn
