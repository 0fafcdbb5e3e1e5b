// Experiment CLI: stats, gen, crossval, ablate, sweep, compare.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "egnn/experiment.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string model;
  std::optional<int> variant;
  std::string gate;
  std::optional<int> jobs;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "experiment config file");
  cmd->add_option("--seed", flags.seed, "override seed");
  cmd->add_option("--out", flags.out, "output directory");
  cmd->add_option("--model", flags.model, "model kind: egnn|irt|mirt|pmf|dina");
  cmd->add_option("--variant", flags.variant, "egnn channel variant 1..4");
  cmd->add_option("--gate", flags.gate, "gate mode: literal|norm");
  cmd->add_option("--jobs", flags.jobs, "parallel fold workers");
}

egnn::ExperimentConfig build_config(const CommonFlags& flags) {
  egnn::ExperimentConfig cfg;
  if (!flags.config.empty()) {
    cfg = egnn::ExperimentConfig::from_file(flags.config);
  }
  if (flags.seed.has_value()) cfg.seed = *flags.seed;
  if (!flags.out.empty()) cfg.out_dir = flags.out;
  if (!flags.model.empty()) cfg.model = flags.model;
  if (flags.variant.has_value()) cfg.train.variant_level = *flags.variant;
  if (!flags.gate.empty()) cfg.train.gate = egnn::parse_gate_mode(flags.gate);
  if (flags.jobs.has_value()) cfg.jobs = *flags.jobs;
  return cfg;
}

void print_aggregate(const egnn::RunRecord& rec) {
  std::printf("model=%s source=%s seed=%llu folds=%zu\n", rec.model.c_str(),
              rec.source.c_str(), static_cast<unsigned long long>(rec.seed),
              rec.folds.size());
  for (const auto& [name, ms] : rec.aggregate) {
    std::printf("  %-5s %.4f +/- %.4f\n", name.c_str(), ms.first, ms.second);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cognitive diagnosis experiment toolkit"};
  app.require_subcommand(1);

  CommonFlags stats_flags, gen_flags, cv_flags, ab_flags, sw_flags, cmp_flags;

  auto* stats_cmd = app.add_subcommand("stats", "print dataset statistics");
  std::string stats_logs, stats_q, stats_name = "dataset";
  stats_cmd->add_option("--logs", stats_logs, "log CSV path");
  stats_cmd->add_option("--q", stats_q, "Q-matrix CSV path");
  stats_cmd->add_option("--name", stats_name, "label for the printed row");
  add_common(stats_cmd, stats_flags);

  auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen_cmd, gen_flags);

  auto* cv_cmd = app.add_subcommand("crossval", "cross-validated training");
  add_common(cv_cmd, cv_flags);

  auto* ab_cmd = app.add_subcommand("ablate", "channel-variant ablation");
  add_common(ab_cmd, ab_flags);

  auto* sw_cmd = app.add_subcommand("sweep", "hyperparameter sweep");
  std::string sweep_axis;
  std::vector<int> sweep_values;
  sw_cmd->add_option("--axis", sweep_axis, "dimension|layers")->required();
  sw_cmd->add_option("--values", sweep_values, "axis values")
      ->required()
      ->delimiter(',');
  add_common(sw_cmd, sw_flags);

  auto* cmp_cmd = app.add_subcommand("compare", "multi-model comparison");
  std::vector<std::string> cmp_models;
  cmp_cmd->add_option("--models", cmp_models, "model kinds, reference first")
      ->required()
      ->delimiter(',');
  add_common(cmp_cmd, cmp_flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (stats_cmd->parsed()) {
      egnn::DatasetStats st;
      if (!stats_logs.empty() || !stats_q.empty()) {
        if (stats_logs.empty() || stats_q.empty()) {
          throw egnn::ValidationError("stats needs both --logs and --q");
        }
        const egnn::LoadedDataset loaded =
            egnn::load_dataset(stats_logs, stats_q);
        st = egnn::dataset_stats(loaded.ds);
      } else {
        const egnn::ExperimentConfig cfg = build_config(stats_flags);
        const egnn::MaterializedData data = egnn::materialize(cfg);
        st = egnn::dataset_stats(data.ds);
        stats_name = cfg.source_label();
      }
      std::cout << egnn::format_stats_table(stats_name, st);
    } else if (gen_cmd->parsed()) {
      egnn::ExperimentConfig cfg = build_config(gen_flags);
      if (!cfg.synth.has_value()) {
        throw egnn::ValidationError("gen needs synth.* config keys");
      }
      if (cfg.out_dir.empty()) {
        throw egnn::ValidationError("gen needs --out (or config key out)");
      }
      egnn::SynthSpec spec = *cfg.synth;
      if (!cfg.synth_seed_set) spec.seed = cfg.seed;
      spec.validate();
      const egnn::GroundTruth gt = egnn::generate(spec);
      egnn::write_ground_truth(gt, cfg.out_dir);
      std::cout << "wrote " << cfg.out_dir << "/logs.csv, q.csv, truth.json\n";
    } else if (cv_cmd->parsed()) {
      const egnn::ExperimentConfig cfg = build_config(cv_flags);
      const egnn::RunRecord rec = egnn::run_crossval(cfg);
      print_aggregate(rec);
    } else if (ab_cmd->parsed()) {
      const egnn::ExperimentConfig cfg = build_config(ab_flags);
      const auto records = egnn::run_ablate(cfg);
      for (const auto& rec : records) print_aggregate(rec);
    } else if (sw_cmd->parsed()) {
      const egnn::ExperimentConfig cfg = build_config(sw_flags);
      egnn::SweepAxis axis;
      if (sweep_axis == "dimension" || sweep_axis == "dim" ||
          sweep_axis == "d") {
        axis = egnn::SweepAxis::dimension;
      } else if (sweep_axis == "layers" || sweep_axis == "l") {
        axis = egnn::SweepAxis::layers;
      } else {
        throw egnn::ValidationError("--axis must be dimension or layers");
      }
      const auto records = egnn::run_sweep(cfg, axis, sweep_values);
      for (const auto& rec : records) print_aggregate(rec);
    } else if (cmp_cmd->parsed()) {
      const egnn::ExperimentConfig cfg = build_config(cmp_flags);
      const egnn::ComparisonTable table = egnn::run_compare(cfg, cmp_models);
      std::printf("reference=%s win/tie/loss=%zu/%zu/%zu\n",
                  table.model_names.front().c_str(), table.wtl.total.win,
                  table.wtl.total.tie, table.wtl.total.loss);
      for (std::size_t m = 0; m < table.model_names.size(); ++m) {
        std::printf("  %-6s mean_rank=%.3f", table.model_names[m].c_str(),
                    table.mean_ranks[m]);
        if (m > 0 && table.wilcoxon_p[m - 1].has_value()) {
          std::printf(" wilcoxon_p=%.4g", *table.wilcoxon_p[m - 1]);
        }
        std::printf("\n");
      }
    }
  } catch (const egnn::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
