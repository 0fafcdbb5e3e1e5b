#pragma once
// The gated four-channel diagnosis model: per-channel parallel affine+sigmoid
// layers combined by a gate, concatenation fusion, and a nonnegative-weight
// sigmoid prediction head trained with Adam + projection.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "egnn/data.hpp"
#include "egnn/features.hpp"
#include "egnn/nn.hpp"

namespace egnn {

enum class GateMode {
  literal_uniform,   // gate independent of layer index, collapses to 1/l
  layer_norm_gated,  // softmax over the L2 norms of the layer activations
};

// Nested channel subsets: level 1 = {se}, 2 = +sk, 3 = +es, 4 = +ek.
struct Variant {
  int level = 4;

  bool has_se() const { return level >= 1; }
  bool has_sk() const { return level >= 2; }
  bool has_es() const { return level >= 3; }
  bool has_ek() const { return level >= 4; }
  int n_channels() const { return level; }
  bool has_exercise_side() const { return level >= 3; }
};

struct TrainConfig {
  double lr = 0.003;
  int epochs = 200;
  int batch_size = 256;
  double dropout = 0.2;
  std::uint64_t seed = 0;
  GateMode gate = GateMode::literal_uniform;
  int variant_level = 4;
  int dim = 128;    // channel output width d
  int layers = 2;   // parallel transforms per channel l
  // 0 = single affine prediction layer; H > 0 inserts a hidden layer of
  // width H with sigmoid activation and nonnegative weights, which keeps
  // the prediction monotone in every fused coordinate
  int cap_hidden = 0;
  int latent_dim = 8;  // mirt/pmf baselines
  // early stopping: halt when the epoch loss improves by less than
  // min_improvement for patience consecutive epochs
  double min_improvement = 1e-5;
  int patience = 10;

  void validate() const;
};

struct ChannelConfig {
  std::size_t in_dim = 0;
  std::size_t out_dim = 128;
  std::size_t layers = 2;
  GateMode gate = GateMode::literal_uniform;
};

// Scratch for one channel evaluation; reusable across entities.
struct ChannelEval {
  std::vector<double> h;      // layers * out_dim activations
  std::vector<double> gates;  // layers, sum to 1
  std::vector<double> norms;  // layers (layer_norm_gated only)
  std::vector<double> out;    // out_dim
  std::vector<double> mask;   // out_dim dropout factors (training)
};

// One gated channel: l parallel affine+sigmoid transforms of the raw input,
// combined with gate weights summing to 1.
struct GnnChannel {
  ChannelConfig cfg;
  std::vector<Linear> layers;

  GnnChannel() = default;
  GnnChannel(const ChannelConfig& cfg, Rng& rng);

  void forward(std::span<const double> x, ChannelEval& ev) const;
  // zeroes entries of ev.out with probability rate and fills ev.mask
  void apply_dropout(ChannelEval& ev, double rate, Rng& rng) const;
  // upstream = dL/d(out after dropout); scratch needs 2*out_dim doubles
  void backward(std::span<const double> x, const ChannelEval& ev,
                std::span<const double> upstream, bool dropped_out,
                std::span<double> scratch);
  void collect_params(std::vector<Param*>& out);
};

// Concatenation fusion (order: se, sk, es, ek over present channels).
std::vector<double> fuse(const std::vector<std::span<const double>>& parts);

struct TrainResult {
  std::vector<double> epoch_losses;
  int epochs_run = 0;
  // smallest head weight observed after any optimizer step (post-projection)
  double min_head_weight = 0.0;
  bool early_stopped = false;
  std::optional<AdamSnapshot> adam;
};

class EgnnModel {
 public:
  EgnnModel() = default;
  // Dimensions come from the dataset; parameters are Xavier-initialized
  // from rng.
  EgnnModel(const Dataset& ds, const TrainConfig& cfg, Rng& rng);

  const Variant& variant() const { return variant_; }
  GateMode gate() const { return gate_; }
  int dim() const { return d_; }
  int layer_count() const { return l_; }
  int cap_hidden() const { return cap_hidden_; }
  std::size_t fused_width() const {
    return static_cast<std::size_t>(d_) *
           static_cast<std::size_t>(variant_.n_channels());
  }

  std::vector<Param*> params();
  const FusionHead& head() const { return head_; }
  FusionHead& head() { return head_; }
  const Linear* cap_layer() const {
    return cap_hidden_ > 0 ? &cap_ : nullptr;
  }
  GnnChannel& channel_se() { return *se_; }
  GnnChannel& channel_sk() { return *sk_; }
  GnnChannel& channel_es() { return *es_; }
  GnnChannel& channel_ek() { return *ek_; }

  // Projection of all prediction weights onto the nonnegative orthant
  // (the hidden layer too, when present); call after every optimizer step.
  void project_nonneg();
  double min_prediction_weight() const;

  // Mini-batch training; deterministic for a fixed cfg.seed. FeatureMaps
  // must be built from exactly train_log_indices.
  TrainResult train(const Dataset& ds, const FeatureMaps& fm,
                    std::span<const std::size_t> train_log_indices,
                    const TrainConfig& cfg);

  // Inference (dropout off, pure).
  std::vector<double> predict_all(
      const FeatureMaps& fm,
      std::span<const std::pair<std::size_t, std::size_t>> pairs) const;
  double predict_one(const FeatureMaps& fm, std::size_t student,
                     std::size_t exercise) const;

  // Mean inference-mode BCE over the given logs.
  double batch_loss(const Dataset& ds, const FeatureMaps& fm,
                    std::span<const std::size_t> log_indices) const;

  // Mean BCE over the given logs with full gradient accumulation into the
  // parameter grads (dropout off). Straightforward per-log reference path,
  // independent of the batched trainer; the surface that finite-difference
  // checks and trainer-equivalence tests verify.
  double loss_and_grads(const Dataset& ds, const FeatureMaps& fm,
                        std::span<const std::size_t> log_indices);

  // Concatenated channel outputs for one (student, exercise) pair
  // (inference mode); fused[0..d) is the se output.
  std::vector<double> fused_vector(const FeatureMaps& fm, std::size_t student,
                                   std::size_t exercise) const;
  // sigmoid(head(fused)); the probe surface for monotonicity checks
  double predict_fused(std::span<const double> fused) const;

  // Per-concept mastery estimate for one student: prediction against a
  // probe exercise tagging only that concept (zero exercise-student row).
  // Requires the ek channel (full variant).
  std::vector<double> mastery_profile(const FeatureMaps& fm,
                                      std::size_t student) const;

  // Checkpointing (JSON). id_map_hash guards against mismatched datasets.
  std::string checkpoint_json(const TrainConfig& cfg,
                              std::uint64_t id_map_hash) const;
  static EgnnModel from_checkpoint_json(const std::string& text,
                                        std::optional<std::uint64_t>
                                            expect_id_map_hash = std::nullopt);

 private:
  friend struct EgnnTrainer;

  // First-prediction-layer partial contributed by one entity's channels.
  void entity_part(const FeatureMaps& fm, bool is_student, std::size_t id,
                   double* part) const;

  Variant variant_;
  GateMode gate_ = GateMode::literal_uniform;
  int d_ = 128;
  int l_ = 2;
  int cap_hidden_ = 0;
  std::optional<GnnChannel> se_, sk_, es_, ek_;
  Linear cap_;       // fused_width -> cap_hidden, used when cap_hidden_ > 0
  FusionHead head_;  // over fused (cap_hidden_ == 0) or hidden activations
};

GateMode parse_gate_mode(const std::string& s);
std::string gate_mode_name(GateMode g);

}  // namespace egnn
