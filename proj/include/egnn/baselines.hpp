#pragma once
// Gradient-trained reference diagnosers on the shared optimizer stack:
// IRT, MIRT, PMF, and a sigmoid-relaxed DINA. Constrained quantities are
// kept feasible by reparameterization (softplus / scaled sigmoid), so the
// training loop needs no projection step.

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "egnn/data.hpp"
#include "egnn/model.hpp"
#include "egnn/nn.hpp"

namespace egnn {

enum class BaselineKind { irt, mirt, pmf, dina };

BaselineKind parse_baseline_kind(const std::string& s);
std::string baseline_kind_name(BaselineKind k);

class BaselineModel {
 public:
  virtual ~BaselineModel() = default;
  virtual BaselineKind kind() const = 0;
  virtual double forward(std::size_t n, std::size_t m) const = 0;
  // accumulate parameter gradients for dL/dyhat at (n, m)
  virtual void accumulate(std::size_t n, std::size_t m, double dldyhat) = 0;
  virtual std::vector<Param*> params() = 0;
  virtual std::string checkpoint_json(const TrainConfig& cfg,
                                      std::uint64_t id_map_hash) const = 0;

  std::vector<double> predict_all(
      std::span<const std::pair<std::size_t, std::size_t>> pairs) const;
};

// yhat = sigmoid(a_m (theta_n - b_m)) with a = softplus(a_raw) > 0.
class IrtModel : public BaselineModel {
 public:
  IrtModel(std::size_t n_students, std::size_t n_exercises, Rng& rng);
  BaselineKind kind() const override { return BaselineKind::irt; }
  double forward(std::size_t n, std::size_t m) const override;
  void accumulate(std::size_t n, std::size_t m, double dldyhat) override;
  std::vector<Param*> params() override;
  std::string checkpoint_json(const TrainConfig& cfg,
                              std::uint64_t id_map_hash) const override;

  double theta(std::size_t n) const { return theta_.value.values[n]; }
  double discrimination(std::size_t m) const;
  double difficulty(std::size_t m) const { return b_.value.values[m]; }

 private:
  Param theta_;  // N x 1
  Param a_raw_;  // M x 1
  Param b_;      // M x 1
};

// yhat = sigmoid(a_m . theta_n - b_m), latent dimension k.
class MirtModel : public BaselineModel {
 public:
  MirtModel(std::size_t n_students, std::size_t n_exercises, std::size_t k,
            Rng& rng);
  BaselineKind kind() const override { return BaselineKind::mirt; }
  double forward(std::size_t n, std::size_t m) const override;
  void accumulate(std::size_t n, std::size_t m, double dldyhat) override;
  std::vector<Param*> params() override;
  std::string checkpoint_json(const TrainConfig& cfg,
                              std::uint64_t id_map_hash) const override;

 private:
  std::size_t k_;
  Param theta_;  // N x k
  Param a_;      // M x k
  Param b_;      // M x 1
};

// yhat = sigmoid(u_n . v_m + student_bias_n + exercise_bias_m).
class PmfModel : public BaselineModel {
 public:
  PmfModel(std::size_t n_students, std::size_t n_exercises, std::size_t k,
           Rng& rng);
  BaselineKind kind() const override { return BaselineKind::pmf; }
  double forward(std::size_t n, std::size_t m) const override;
  void accumulate(std::size_t n, std::size_t m, double dldyhat) override;
  std::vector<Param*> params() override;
  std::string checkpoint_json(const TrainConfig& cfg,
                              std::uint64_t id_map_hash) const override;

 private:
  std::size_t k_;
  Param u_;  // N x k
  Param v_;  // M x k
  Param student_bias_;   // N x 1
  Param exercise_bias_;  // M x 1
};

// Soft mastery p_nc = sigmoid(alpha_logits); eta = prod over tagged concepts;
// yhat = (1-s) eta + g (1-eta) with s, g = 0.5 sigmoid(raw) in (0, 0.5).
class DinaModel : public BaselineModel {
 public:
  DinaModel(std::size_t n_students, const QMatrix& q, Rng& rng);
  BaselineKind kind() const override { return BaselineKind::dina; }
  double forward(std::size_t n, std::size_t m) const override;
  void accumulate(std::size_t n, std::size_t m, double dldyhat) override;
  std::vector<Param*> params() override;
  std::string checkpoint_json(const TrainConfig& cfg,
                              std::uint64_t id_map_hash) const override;

  double mastery(std::size_t n, std::size_t c) const;
  double slip(std::size_t m) const;
  double guess(std::size_t m) const;

 private:
  const QMatrix* q_;
  Param alpha_logits_;  // N x C
  Param s_raw_;         // M x 1
  Param g_raw_;         // M x 1
};

std::unique_ptr<BaselineModel> make_baseline(BaselineKind kind,
                                             const Dataset& ds,
                                             const TrainConfig& cfg, Rng& rng);

// Same loop shape as the main model: seeded shuffling, mini-batches, BCE,
// Adam; no projection (constraints live in the reparameterization).
TrainResult train_baseline(BaselineModel& model, const Dataset& ds,
                           std::span<const std::size_t> train_log_indices,
                           const TrainConfig& cfg);

}  // namespace egnn
