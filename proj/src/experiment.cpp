#include "egnn/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "egnn/baselines.hpp"
#include "egnn/features.hpp"

namespace egnn {

using nlohmann::json;

namespace {

const std::vector<std::string> kMetricNames = {"acc", "aupr", "auc",
                                               "f1",  "pre",  "rec"};

double metric_value(const MetricsReport& r, const std::string& name) {
  if (name == "acc") return r.acc;
  if (name == "aupr") return r.aupr;
  if (name == "auc") return r.auc;
  if (name == "f1") return r.f1;
  if (name == "pre") return r.pre;
  if (name == "rec") return r.rec;
  throw ValidationError("unknown metric " + name);
}

std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) {
  return Rng(seed).derive(1000 + fold).seed();
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': bad number '" + value +
                          "'");
  }
}

long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': bad integer '" + value +
                          "'");
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  ExperimentConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(line_no) +
                            ": expected key = value");
    }
    cfg.set_key(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void ExperimentConfig::set_key(const std::string& key,
                               const std::string& value) {
  auto ensure_synth = [&]() -> SynthSpec& {
    if (!synth.has_value()) synth.emplace();
    return *synth;
  };

  if (key == "logs") {
    logs_path = value;
  } else if (key == "qmatrix") {
    q_path = value;
  } else if (key == "synth.process") {
    if (value == "dina") {
      ensure_synth().process = SynthProcess::dina;
    } else if (value == "irt") {
      ensure_synth().process = SynthProcess::irt;
    } else {
      throw ValidationError("synth.process must be dina or irt");
    }
  } else if (key == "synth.students") {
    ensure_synth().n_students = static_cast<std::size_t>(parse_int(key, value));
  } else if (key == "synth.exercises") {
    ensure_synth().n_exercises =
        static_cast<std::size_t>(parse_int(key, value));
  } else if (key == "synth.concepts") {
    ensure_synth().n_concepts = static_cast<std::size_t>(parse_int(key, value));
  } else if (key == "synth.concepts_per_exercise") {
    ensure_synth().concepts_per_exercise = parse_real(key, value);
  } else if (key == "synth.slip") {
    ensure_synth().slip = parse_real(key, value);
  } else if (key == "synth.guess") {
    ensure_synth().guess = parse_real(key, value);
  } else if (key == "synth.ability_sd") {
    ensure_synth().ability_sd = parse_real(key, value);
  } else if (key == "synth.seed") {
    ensure_synth().seed = static_cast<std::uint64_t>(parse_int(key, value));
    synth_seed_set = true;
  } else if (key == "model") {
    model = value;
  } else if (key == "variant") {
    train.variant_level = static_cast<int>(parse_int(key, value));
  } else if (key == "gate") {
    train.gate = parse_gate_mode(value);
  } else if (key == "dim") {
    train.dim = static_cast<int>(parse_int(key, value));
  } else if (key == "layers") {
    train.layers = static_cast<int>(parse_int(key, value));
  } else if (key == "cap_hidden") {
    train.cap_hidden = static_cast<int>(parse_int(key, value));
  } else if (key == "lr") {
    train.lr = parse_real(key, value);
  } else if (key == "epochs") {
    train.epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "batch_size") {
    train.batch_size = static_cast<int>(parse_int(key, value));
  } else if (key == "dropout") {
    train.dropout = parse_real(key, value);
  } else if (key == "latent_dim") {
    train.latent_dim = static_cast<int>(parse_int(key, value));
  } else if (key == "folds") {
    folds = static_cast<std::size_t>(parse_int(key, value));
  } else if (key == "seed") {
    seed = static_cast<std::uint64_t>(parse_int(key, value));
  } else if (key == "out") {
    out_dir = value;
  } else if (key == "jobs") {
    jobs = static_cast<int>(parse_int(key, value));
  } else if (key == "dump_features") {
    dump_features = value == "1" || value == "true";
  } else {
    throw ValidationError("unknown config key '" + key + "'");
  }
}

void ExperimentConfig::validate() const {
  const bool has_files = !logs_path.empty() || !q_path.empty();
  if (has_files && (logs_path.empty() || q_path.empty())) {
    throw ValidationError("both logs and qmatrix paths are required");
  }
  if (has_files == synth.has_value()) {
    throw ValidationError(
        "config needs exactly one data source: logs/qmatrix or synth.*");
  }
  if (has_files) {
    if (!std::filesystem::exists(logs_path)) {
      throw ValidationError("logs file does not exist: " + logs_path);
    }
    if (!std::filesystem::exists(q_path)) {
      throw ValidationError("qmatrix file does not exist: " + q_path);
    }
  }
  if (synth.has_value()) synth->validate();
  if (model != "egnn") parse_baseline_kind(model);  // throws on bad kind
  train.validate();
  if (folds < 2) throw ValidationError("folds must be at least 2");
  if (jobs < 1) throw ValidationError("jobs must be at least 1");
}

std::string ExperimentConfig::source_label() const {
  if (synth.has_value()) {
    return synth->process == SynthProcess::dina ? "synth-dina" : "synth-irt";
  }
  return std::filesystem::path(logs_path).stem().string();
}

MaterializedData materialize(const ExperimentConfig& cfg) {
  cfg.validate();
  MaterializedData data;
  if (cfg.synth.has_value()) {
    SynthSpec spec = *cfg.synth;
    if (!cfg.synth_seed_set) spec.seed = cfg.seed;
    GroundTruth gt = generate(spec);
    data.ds = gt.dataset;
    data.truth = std::move(gt);
    data.students.identity = true;
    data.students.raw.reserve(data.ds.n_students);
    for (std::size_t i = 0; i < data.ds.n_students; ++i) {
      data.students.raw.push_back(std::to_string(i));
    }
    data.exercises.identity = true;
    for (std::size_t i = 0; i < data.ds.n_exercises; ++i) {
      data.exercises.raw.push_back(std::to_string(i));
    }
  } else {
    LoadedDataset loaded = load_dataset(cfg.logs_path, cfg.q_path);
    data.ds = std::move(loaded.ds);
    data.students = std::move(loaded.students);
    data.exercises = std::move(loaded.exercises);
  }
  return data;
}

namespace {

json fold_record_to_json(const FoldRecord& fr) {
  json j;
  j["fold"] = fr.fold;
  j["metrics"] = {{"acc", fr.metrics.acc}, {"aupr", fr.metrics.aupr},
                  {"auc", fr.metrics.auc}, {"f1", fr.metrics.f1},
                  {"pre", fr.metrics.pre}, {"rec", fr.metrics.rec}};
  j["counts"] = {{"tp", fr.metrics.counts.tp},
                 {"fp", fr.metrics.counts.fp},
                 {"fn", fr.metrics.counts.fn},
                 {"tn", fr.metrics.counts.tn}};
  j["loss_trace"] = fr.loss_trace;
  j["epochs_run"] = fr.epochs_run;
  j["early_stopped"] = fr.early_stopped;
  if (fr.min_head_weight.has_value()) {
    j["min_head_weight"] = *fr.min_head_weight;
  }
  return j;
}

// One fold of training + evaluation for any model kind.
FoldRecord run_fold(const ExperimentConfig& cfg, const MaterializedData& data,
                    const FoldPlan& plan, std::size_t fold,
                    std::string* checkpoint_out) {
  const Dataset& ds = data.ds;
  const std::vector<std::size_t> train_idx = plan.train_indices(fold);
  const std::vector<std::size_t> test_idx = plan.test_indices(fold);
  if (train_idx.empty() || test_idx.empty()) {
    throw ValidationError("fold " + std::to_string(fold) +
                          ": empty train or test split");
  }

  TrainConfig tc = cfg.train;
  tc.seed = fold_seed(cfg.seed, fold);
  const std::uint64_t ids_hash = id_map_hash(data.students, data.exercises);

  FoldRecord fr;
  fr.fold = fold;

  std::vector<std::pair<std::size_t, std::size_t>> test_pairs;
  test_pairs.reserve(test_idx.size());
  ScoredPairs sp;
  for (std::size_t idx : test_idx) {
    test_pairs.emplace_back(ds.logs[idx].student, ds.logs[idx].exercise);
    sp.labels.push_back(label_of(ds.logs[idx].score));
  }

  if (cfg.model == "egnn") {
    const FeatureMaps fm = build_feature_maps(ds, train_idx);
    Rng init_rng = Rng(tc.seed).derive(0);
    EgnnModel model(ds, tc, init_rng);
    TrainResult tr = model.train(ds, fm, train_idx, tc);
    fr.loss_trace = std::move(tr.epoch_losses);
    fr.epochs_run = tr.epochs_run;
    fr.early_stopped = tr.early_stopped;
    fr.min_head_weight = tr.min_head_weight;
    sp.scores = model.predict_all(fm, test_pairs);
    if (checkpoint_out != nullptr) {
      *checkpoint_out = model.checkpoint_json(tc, ids_hash);
    }
    if (cfg.dump_features && !cfg.out_dir.empty()) {
      dump_feature_maps(fm, cfg.out_dir + "/features_fold" +
                                std::to_string(fold));
    }
  } else {
    const BaselineKind kind = parse_baseline_kind(cfg.model);
    Rng init_rng = Rng(tc.seed).derive(0);
    auto model = make_baseline(kind, ds, tc, init_rng);
    TrainResult tr = train_baseline(*model, ds, train_idx, tc);
    fr.loss_trace = std::move(tr.epoch_losses);
    fr.epochs_run = tr.epochs_run;
    fr.early_stopped = tr.early_stopped;
    sp.scores = model->predict_all(test_pairs);
    if (checkpoint_out != nullptr) {
      *checkpoint_out = model->checkpoint_json(tc, ids_hash);
    }
  }

  try {
    fr.metrics = compute_report(sp);
  } catch (const ValidationError& e) {
    throw ValidationError("fold " + std::to_string(fold) + ": " +
                          std::string(e.what()));
  }
  return fr;
}

}  // namespace

std::string RunRecord::to_json(bool include_wall_clock) const {
  json j;
  j["model"] = model;
  j["source"] = source;
  j["seed"] = seed;
  j["version"] = version;
  j["fold_hash"] = fold_hash;
  auto fold_arr = json::array();
  for (const auto& fr : folds) fold_arr.push_back(fold_record_to_json(fr));
  j["folds"] = std::move(fold_arr);
  json agg = json::object();
  for (const auto& [name, ms] : aggregate) {
    agg[name] = {{"mean", ms.first}, {"sd", ms.second}};
  }
  j["aggregate"] = std::move(agg);
  if (include_wall_clock) j["wall_clock_sec"] = wall_clock_sec;
  return j.dump(2);
}

double RunRecord::mean(const std::string& metric) const {
  auto it = aggregate.find(metric);
  if (it == aggregate.end()) throw ValidationError("no metric " + metric);
  return it->second.first;
}

RunRecord run_crossval(const ExperimentConfig& cfg,
                       const MaterializedData& data, const FoldPlan* plan,
                       const std::string& record_name) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();

  FoldPlan local_plan;
  if (plan == nullptr) {
    local_plan = make_folds(data.ds, cfg.folds, cfg.seed);
    plan = &local_plan;
  }

  RunRecord rec;
  rec.model = cfg.model;
  rec.source = cfg.source_label();
  rec.seed = cfg.seed;
  rec.version = kToolkitVersion;
  rec.fold_hash = plan->hash();
  rec.folds.resize(plan->k);
  std::vector<std::string> checkpoints(plan->k);

  const std::size_t n_jobs =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), plan->k);
  if (n_jobs <= 1) {
    for (std::size_t f = 0; f < plan->k; ++f) {
      rec.folds[f] = run_fold(cfg, data, *plan, f,
                              cfg.out_dir.empty() ? nullptr : &checkpoints[f]);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(plan->k);
    auto worker = [&]() {
      for (;;) {
        const std::size_t f = next.fetch_add(1);
        if (f >= plan->k) return;
        try {
          rec.folds[f] =
              run_fold(cfg, data, *plan, f,
                       cfg.out_dir.empty() ? nullptr : &checkpoints[f]);
        } catch (...) {
          errors[f] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_jobs; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (const auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }

  for (const auto& name : kMetricNames) {
    double sum = 0.0;
    for (const auto& fr : rec.folds) sum += metric_value(fr.metrics, name);
    const double mean = sum / static_cast<double>(rec.folds.size());
    double ss = 0.0;
    for (const auto& fr : rec.folds) {
      const double d = metric_value(fr.metrics, name) - mean;
      ss += d * d;
    }
    const double sd =
        rec.folds.size() > 1
            ? std::sqrt(ss / static_cast<double>(rec.folds.size() - 1))
            : 0.0;
    rec.aggregate[name] = {mean, sd};
  }

  rec.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    {
      std::ofstream out(cfg.out_dir + "/" + record_name + ".json");
      out << rec.to_json() << '\n';
    }
    for (std::size_t f = 0; f < plan->k; ++f) {
      std::ofstream out(cfg.out_dir + "/" + record_name + "_fold" +
                        std::to_string(f) + "_checkpoint.json");
      out << checkpoints[f] << '\n';
    }
    write_id_map(cfg.out_dir + "/student_ids.json", data.students);
    write_id_map(cfg.out_dir + "/exercise_ids.json", data.exercises);
  }
  return rec;
}

RunRecord run_crossval(const ExperimentConfig& cfg) {
  const MaterializedData data = materialize(cfg);
  return run_crossval(cfg, data, nullptr, "run");
}

namespace {

void write_metric_csv(const std::string& path, const std::string& key_col,
                      const std::vector<std::string>& keys,
                      const std::vector<RunRecord>& records) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << key_col;
  for (const auto& name : kMetricNames) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < records.size(); ++i) {
    out << keys[i];
    for (const auto& name : kMetricNames) {
      out << ',' << records[i].mean(name);
    }
    out << '\n';
  }
}

}  // namespace

std::vector<RunRecord> run_ablate(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.model != "egnn") {
    throw ValidationError("ablate applies to the egnn model only");
  }
  const MaterializedData data = materialize(cfg);
  const FoldPlan plan = make_folds(data.ds, cfg.folds, cfg.seed);

  std::vector<RunRecord> records;
  std::vector<std::string> keys;
  for (int level = 1; level <= 4; ++level) {
    ExperimentConfig sub = cfg;
    sub.train.variant_level = level;
    records.push_back(run_crossval(sub, data, &plan,
                                   "ablate_variant" + std::to_string(level)));
    keys.push_back(std::to_string(level));
  }
  if (!cfg.out_dir.empty()) {
    write_metric_csv(cfg.out_dir + "/fig3.csv", "variant", keys, records);
  }
  return records;
}

std::vector<RunRecord> run_sweep(const ExperimentConfig& cfg, SweepAxis axis,
                                 const std::vector<int>& values) {
  cfg.validate();
  if (values.empty()) throw ValidationError("sweep value list is empty");
  if (cfg.model != "egnn") {
    throw ValidationError("sweep applies to the egnn model only");
  }
  const MaterializedData data = materialize(cfg);
  const FoldPlan plan = make_folds(data.ds, cfg.folds, cfg.seed);

  std::vector<RunRecord> records;
  std::vector<std::string> keys;
  const bool is_dim = axis == SweepAxis::dimension;
  for (int v : values) {
    ExperimentConfig sub = cfg;
    if (is_dim) {
      sub.train.dim = v;
    } else {
      sub.train.layers = v;
    }
    const std::string name =
        std::string("sweep_") + (is_dim ? "d" : "l") + std::to_string(v);
    records.push_back(run_crossval(sub, data, &plan, name));
    keys.push_back(std::to_string(v));
  }
  if (!cfg.out_dir.empty()) {
    const std::string file = is_dim ? "fig4.csv" : "fig5.csv";
    write_metric_csv(cfg.out_dir + "/" + file, is_dim ? "d" : "l", keys,
                     records);
  }
  return records;
}

ComparisonTable run_compare(const ExperimentConfig& cfg,
                            const std::vector<std::string>& models) {
  cfg.validate();
  if (models.size() < 2) {
    throw ValidationError("compare needs at least 2 models");
  }
  const MaterializedData data = materialize(cfg);
  const FoldPlan plan = make_folds(data.ds, cfg.folds, cfg.seed);

  std::vector<RunRecord> records;
  for (const auto& model : models) {
    ExperimentConfig sub = cfg;
    sub.model = model;
    records.push_back(run_crossval(sub, data, &plan, "compare_" + model));
    if (records.back().fold_hash != records.front().fold_hash) {
      throw ValidationError("compare: fold mismatch between models");
    }
  }

  ComparisonTable table;
  table.model_names = models;
  const std::string src = cfg.source_label();
  for (const auto& name : kMetricNames) {
    table.row_labels.push_back(src + "/" + name);
    std::vector<double> row;
    for (const auto& rec : records) row.push_back(rec.mean(name));
    table.values.push_back(std::move(row));
  }
  table.compute_statistics();

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    json j;
    j["models"] = table.model_names;
    j["rows"] = table.row_labels;
    j["values"] = table.values;
    j["win_tie_loss"] = {{"win", table.wtl.total.win},
                         {"tie", table.wtl.total.tie},
                         {"loss", table.wtl.total.loss}};
    auto per = json::array();
    for (std::size_t c = 0; c < table.wtl.per_competitor.size(); ++c) {
      per.push_back({{"model", table.model_names[c + 1]},
                     {"win", table.wtl.per_competitor[c].win},
                     {"tie", table.wtl.per_competitor[c].tie},
                     {"loss", table.wtl.per_competitor[c].loss}});
    }
    j["win_tie_loss_per_model"] = std::move(per);
    auto pvals = json::array();
    for (const auto& p : table.wilcoxon_p) {
      if (p.has_value()) {
        pvals.push_back(*p);
      } else {
        pvals.push_back(nullptr);
      }
    }
    j["wilcoxon_p"] = std::move(pvals);
    j["mean_ranks"] = table.mean_ranks;
    std::ofstream out(cfg.out_dir + "/comparison.json");
    out << j.dump(2) << '\n';

    std::ofstream csv(cfg.out_dir + "/comparison.csv");
    csv << "row";
    for (const auto& m : table.model_names) csv << ',' << m;
    csv << '\n';
    for (std::size_t r = 0; r < table.row_labels.size(); ++r) {
      csv << table.row_labels[r];
      for (double v : table.values[r]) csv << ',' << v;
      csv << '\n';
    }
    csv << "mean_rank";
    for (double v : table.mean_ranks) csv << ',' << v;
    csv << '\n';
  }
  return table;
}

std::string format_stats_table(const std::string& name,
                               const DatasetStats& st) {
  std::ostringstream out;
  out << "name\t|S|\t|E|\t|K|\tlogs\tconcepts_per_exercise\tavg_log\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", st.concepts_per_exercise);
  std::string cpe = buf;
  std::snprintf(buf, sizeof(buf), "%.2f", st.avg_log);
  std::string avg = buf;
  out << name << '\t' << st.n_students << '\t' << st.n_exercises << '\t'
      << st.n_concepts << '\t' << st.n_logs << '\t' << cpe << '\t' << avg
      << '\n';
  return out.str();
}

}  // namespace egnn
