#include "egnn/baselines.hpp"

#include <cmath>
#include <limits>

#include <json.hpp>

namespace egnn {

namespace k = kernels;
using nlohmann::json;

BaselineKind parse_baseline_kind(const std::string& s) {
  if (s == "irt") return BaselineKind::irt;
  if (s == "mirt") return BaselineKind::mirt;
  if (s == "pmf") return BaselineKind::pmf;
  if (s == "dina") return BaselineKind::dina;
  throw ValidationError("unknown baseline kind '" + s + "'");
}

std::string baseline_kind_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::irt: return "irt";
    case BaselineKind::mirt: return "mirt";
    case BaselineKind::pmf: return "pmf";
    case BaselineKind::dina: return "dina";
  }
  return "unknown";
}

std::vector<double> BaselineModel::predict_all(
    std::span<const std::pair<std::size_t, std::size_t>> pairs) const {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& [n, m] : pairs) out.push_back(forward(n, m));
  return out;
}

namespace {

json matrix_to_json(const DenseMatrix& m) {
  return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.values}};
}

std::string baseline_checkpoint(
    const char* kind, const TrainConfig& cfg, std::uint64_t id_map_hash,
    std::initializer_list<std::pair<const char*, const DenseMatrix*>> params) {
  json j;
  j["format"] = "egnncd-checkpoint-v1";
  j["kind"] = kind;
  j["seed"] = cfg.seed;
  j["id_map_hash"] = id_map_hash;
  j["config"] = {{"lr", cfg.lr},
                 {"epochs", cfg.epochs},
                 {"batch_size", cfg.batch_size},
                 {"latent_dim", cfg.latent_dim}};
  json p = json::object();
  for (const auto& [name, m] : params) p[name] = matrix_to_json(*m);
  j["params"] = std::move(p);
  return j.dump();
}

double dsigmoid(double y) { return y * (1.0 - y); }

}  // namespace

// ---------------------------------------------------------------- IRT

IrtModel::IrtModel(std::size_t n_students, std::size_t n_exercises, Rng& rng)
    : theta_(xavier_init(n_students, 1, rng)),
      a_raw_(n_exercises, 1),
      b_(xavier_init(n_exercises, 1, rng)) {}

double IrtModel::discrimination(std::size_t m) const {
  return softplus(a_raw_.value.values[m]);
}

double IrtModel::forward(std::size_t n, std::size_t m) const {
  const double a = softplus(a_raw_.value.values[m]);
  return sigmoid(a * (theta_.value.values[n] - b_.value.values[m]));
}

void IrtModel::accumulate(std::size_t n, std::size_t m, double dldyhat) {
  const double ar = a_raw_.value.values[m];
  const double a = softplus(ar);
  const double gap = theta_.value.values[n] - b_.value.values[m];
  const double yhat = sigmoid(a * gap);
  const double gt = dldyhat * dsigmoid(yhat);  // dL/d(a*gap)
  theta_.grad.values[n] += gt * a;
  b_.grad.values[m] -= gt * a;
  a_raw_.grad.values[m] += gt * gap * sigmoid(ar);  // d softplus = sigmoid
}

std::vector<Param*> IrtModel::params() { return {&theta_, &a_raw_, &b_}; }

std::string IrtModel::checkpoint_json(const TrainConfig& cfg,
                                      std::uint64_t id_map_hash) const {
  return baseline_checkpoint("irt", cfg, id_map_hash,
                             {{"theta", &theta_.value},
                              {"a_raw", &a_raw_.value},
                              {"b", &b_.value}});
}

// ---------------------------------------------------------------- MIRT

MirtModel::MirtModel(std::size_t n_students, std::size_t n_exercises,
                     std::size_t k, Rng& rng)
    : k_(k),
      theta_(xavier_init(n_students, k, rng)),
      a_(xavier_init(n_exercises, k, rng)),
      b_(n_exercises, 1) {}

double MirtModel::forward(std::size_t n, std::size_t m) const {
  const double z = k::active().dot(a_.value[m], theta_.value[n], k_) -
                   b_.value.values[m];
  return sigmoid(z);
}

void MirtModel::accumulate(std::size_t n, std::size_t m, double dldyhat) {
  const auto& ops = k::active();
  const double z = ops.dot(a_.value[m], theta_.value[n], k_) -
                   b_.value.values[m];
  const double yhat = sigmoid(z);
  const double gz = dldyhat * dsigmoid(yhat);
  ops.axpy(a_.grad[m], gz, theta_.value[n], k_);
  ops.axpy(theta_.grad[n], gz, a_.value[m], k_);
  b_.grad.values[m] -= gz;
}

std::vector<Param*> MirtModel::params() { return {&theta_, &a_, &b_}; }

std::string MirtModel::checkpoint_json(const TrainConfig& cfg,
                                       std::uint64_t id_map_hash) const {
  return baseline_checkpoint(
      "mirt", cfg, id_map_hash,
      {{"theta", &theta_.value}, {"a", &a_.value}, {"b", &b_.value}});
}

// ---------------------------------------------------------------- PMF

PmfModel::PmfModel(std::size_t n_students, std::size_t n_exercises,
                   std::size_t k, Rng& rng)
    : k_(k),
      u_(xavier_init(n_students, k, rng)),
      v_(xavier_init(n_exercises, k, rng)),
      student_bias_(n_students, 1),
      exercise_bias_(n_exercises, 1) {}

double PmfModel::forward(std::size_t n, std::size_t m) const {
  const double z = k::active().dot(u_.value[n], v_.value[m], k_) +
                   student_bias_.value.values[n] +
                   exercise_bias_.value.values[m];
  return sigmoid(z);
}

void PmfModel::accumulate(std::size_t n, std::size_t m, double dldyhat) {
  const auto& ops = k::active();
  const double z = ops.dot(u_.value[n], v_.value[m], k_) +
                   student_bias_.value.values[n] +
                   exercise_bias_.value.values[m];
  const double yhat = sigmoid(z);
  const double gz = dldyhat * dsigmoid(yhat);
  ops.axpy(u_.grad[n], gz, v_.value[m], k_);
  ops.axpy(v_.grad[m], gz, u_.value[n], k_);
  student_bias_.grad.values[n] += gz;
  exercise_bias_.grad.values[m] += gz;
}

std::vector<Param*> PmfModel::params() {
  return {&u_, &v_, &student_bias_, &exercise_bias_};
}

std::string PmfModel::checkpoint_json(const TrainConfig& cfg,
                                      std::uint64_t id_map_hash) const {
  return baseline_checkpoint("pmf", cfg, id_map_hash,
                             {{"u", &u_.value},
                              {"v", &v_.value},
                              {"student_bias", &student_bias_.value},
                              {"exercise_bias", &exercise_bias_.value}});
}

// ---------------------------------------------------------------- DINA

DinaModel::DinaModel(std::size_t n_students, const QMatrix& q, Rng& rng)
    : q_(&q),
      alpha_logits_(xavier_init(n_students, q.cols, rng)),
      s_raw_(q.rows, 1),
      g_raw_(q.rows, 1) {
  // start slip/guess near 0.13, comfortably inside (0, 0.5)
  s_raw_.value.fill(-1.0);
  g_raw_.value.fill(-1.0);
}

double DinaModel::mastery(std::size_t n, std::size_t c) const {
  return sigmoid(alpha_logits_.value[n][c]);
}
double DinaModel::slip(std::size_t m) const {
  return 0.5 * sigmoid(s_raw_.value.values[m]);
}
double DinaModel::guess(std::size_t m) const {
  return 0.5 * sigmoid(g_raw_.value.values[m]);
}

double DinaModel::forward(std::size_t n, std::size_t m) const {
  double eta = 1.0;
  for (std::size_t c = 0; c < q_->cols; ++c) {
    if (q_->at(m, c) == 1) eta *= mastery(n, c);
  }
  return (1.0 - slip(m)) * eta + guess(m) * (1.0 - eta);
}

void DinaModel::accumulate(std::size_t n, std::size_t m, double dldyhat) {
  const double s = slip(m);
  const double g = guess(m);
  double eta = 1.0;
  for (std::size_t c = 0; c < q_->cols; ++c) {
    if (q_->at(m, c) == 1) eta *= mastery(n, c);
  }
  const double deta = dldyhat * (1.0 - s - g);
  for (std::size_t c = 0; c < q_->cols; ++c) {
    if (q_->at(m, c) != 1) continue;
    const double p = mastery(n, c);
    // d eta / d logit = (eta / p) * p (1-p) = eta (1-p)
    alpha_logits_.grad[n][c] += deta * eta * (1.0 - p);
  }
  // dyhat/ds = -eta, dyhat/dg = 1 - eta; chain through 0.5*sigmoid(raw)
  const double ss = sigmoid(s_raw_.value.values[m]);
  const double gg = sigmoid(g_raw_.value.values[m]);
  s_raw_.grad.values[m] += dldyhat * (-eta) * 0.5 * dsigmoid(ss);
  g_raw_.grad.values[m] += dldyhat * (1.0 - eta) * 0.5 * dsigmoid(gg);
}

std::vector<Param*> DinaModel::params() {
  return {&alpha_logits_, &s_raw_, &g_raw_};
}

std::string DinaModel::checkpoint_json(const TrainConfig& cfg,
                                       std::uint64_t id_map_hash) const {
  return baseline_checkpoint("dina", cfg, id_map_hash,
                             {{"alpha_logits", &alpha_logits_.value},
                              {"s_raw", &s_raw_.value},
                              {"g_raw", &g_raw_.value}});
}

// ------------------------------------------------------------ factory

std::unique_ptr<BaselineModel> make_baseline(BaselineKind kind,
                                             const Dataset& ds,
                                             const TrainConfig& cfg,
                                             Rng& rng) {
  const std::size_t k = static_cast<std::size_t>(cfg.latent_dim);
  switch (kind) {
    case BaselineKind::irt:
      return std::make_unique<IrtModel>(ds.n_students, ds.n_exercises, rng);
    case BaselineKind::mirt:
      return std::make_unique<MirtModel>(ds.n_students, ds.n_exercises, k,
                                         rng);
    case BaselineKind::pmf:
      return std::make_unique<PmfModel>(ds.n_students, ds.n_exercises, k, rng);
    case BaselineKind::dina:
      return std::make_unique<DinaModel>(ds.n_students, ds.q, rng);
  }
  throw ValidationError("unknown baseline kind");
}

TrainResult train_baseline(BaselineModel& model, const Dataset& ds,
                           std::span<const std::size_t> train_log_indices,
                           const TrainConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  Rng rng_shuffle = root.derive(1);

  std::vector<Param*> params = model.params();
  Adam adam(cfg.lr);

  std::vector<std::size_t> order(train_log_indices.begin(),
                                 train_log_indices.end());
  if (order.empty()) throw ValidationError("train_baseline: empty training set");

  TrainResult result;
  double prev_loss = std::numeric_limits<double>::infinity();
  int stall_streak = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng_shuffle.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const ResponseLog& log = ds.logs[order[i]];
        const double yhat = model.forward(log.student, log.exercise);
        const double y = static_cast<double>(label_of(log.score));
        const BceResult bce = bce_loss(y, yhat);
        loss_sum += bce.loss;
        model.accumulate(log.student, log.exercise,
                         bce.dloss_dyhat * inv_batch);
      }
      adam.step(params);
    }

    const double epoch_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss)) {
      throw std::runtime_error("train_baseline: non-finite epoch loss");
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

}  // namespace egnn
