#pragma once
// Experiment orchestration: cross-validated training for any model kind,
// ablations over channel variants, hyperparameter sweeps, multi-model
// comparison with statistics, and dataset stats, all reproducible from a
// flat key=value config file plus a seed.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "egnn/data.hpp"
#include "egnn/metrics.hpp"
#include "egnn/model.hpp"
#include "egnn/synth.hpp"

namespace egnn {

struct ExperimentConfig {
  // exactly one data source: files or a synth spec
  std::string logs_path;
  std::string q_path;
  std::optional<SynthSpec> synth;
  bool synth_seed_set = false;

  std::string model = "egnn";  // egnn|irt|mirt|pmf|dina
  TrainConfig train;
  std::size_t folds = 5;
  std::uint64_t seed = 42;
  std::string out_dir;
  int jobs = 1;
  bool dump_features = false;

  // Flat `key = value` lines, '#' comments; unknown keys are errors.
  static ExperimentConfig from_file(const std::string& path);
  void set_key(const std::string& key, const std::string& value);
  void validate() const;
  std::string source_label() const;
};

struct MaterializedData {
  Dataset ds;
  std::optional<GroundTruth> truth;
  IdMap students;
  IdMap exercises;
};

MaterializedData materialize(const ExperimentConfig& cfg);

struct FoldRecord {
  std::size_t fold = 0;
  MetricsReport metrics;
  std::vector<double> loss_trace;
  int epochs_run = 0;
  bool early_stopped = false;
  // head-weight floor across all optimizer steps; egnn only
  std::optional<double> min_head_weight;
};

struct RunRecord {
  std::string model;
  std::string source;
  std::uint64_t seed = 0;
  std::string version;
  std::uint64_t fold_hash = 0;
  std::vector<FoldRecord> folds;
  // metric name -> (mean, sd) over folds; sample sd
  std::map<std::string, std::pair<double, double>> aggregate;
  double wall_clock_sec = 0.0;

  std::string to_json(bool include_wall_clock = true) const;
  double mean(const std::string& metric) const;
};

// Cross-validated train/evaluate for cfg.model. When plan is null a fresh
// FoldPlan is derived from (cfg.seed, cfg.folds). Writes run.json and
// per-fold checkpoints under cfg.out_dir when set.
RunRecord run_crossval(const ExperimentConfig& cfg,
                       const MaterializedData& data,
                       const FoldPlan* plan = nullptr,
                       const std::string& record_name = "run");

// Convenience: materializes data internally.
RunRecord run_crossval(const ExperimentConfig& cfg);

// One crossval per channel variant level 1..4 on shared folds; emits
// fig3.csv (variant x metric).
std::vector<RunRecord> run_ablate(const ExperimentConfig& cfg);

enum class SweepAxis { dimension, layers };
// One crossval per value on shared folds; emits fig4.csv (dimension) or
// fig5.csv (layers).
std::vector<RunRecord> run_sweep(const ExperimentConfig& cfg, SweepAxis axis,
                                 const std::vector<int>& values);

// Several model kinds on identical folds; first model is the reference.
// Emits comparison.json and comparison.csv.
ComparisonTable run_compare(const ExperimentConfig& cfg,
                            const std::vector<std::string>& models);

std::string format_stats_table(const std::string& name,
                               const DatasetStats& st);

}  // namespace egnn
