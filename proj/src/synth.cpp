#include "egnn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "egnn/nn.hpp"

namespace egnn {

void SynthSpec::validate() const {
  if (n_students == 0 || n_exercises == 0 || n_concepts == 0) {
    throw ValidationError("synth spec: counts must be positive");
  }
  if (concepts_per_exercise < 1.0 ||
      concepts_per_exercise > static_cast<double>(n_concepts)) {
    throw ValidationError(
        "synth spec: concepts_per_exercise must lie in [1, n_concepts]");
  }
  if (process == SynthProcess::dina) {
    if (!(slip > 0.0 && slip < 0.5) || !(guess > 0.0 && guess < 0.5)) {
      throw ValidationError("synth spec: slip/guess must lie in (0, 0.5)");
    }
  }
  if (process == SynthProcess::irt && ability_sd < 0.0) {
    throw ValidationError("synth spec: ability_sd must be nonnegative");
  }
}

QMatrix gen_qmatrix(const SynthSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t m = spec.n_exercises;
  const std::size_t c = spec.n_concepts;

  // Row sizes: distribute round(M * mean) tags as evenly as possible, then
  // shuffle which rows carry the extra tag.
  const std::size_t total = static_cast<std::size_t>(
      std::llround(spec.concepts_per_exercise * static_cast<double>(m)));
  const std::size_t base = std::max<std::size_t>(1, total / m);
  std::size_t extra = total > base * m ? total - base * m : 0;

  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<std::size_t> sizes(m, base);
    std::vector<std::size_t> rows(m);
    std::iota(rows.begin(), rows.end(), 0);
    rng.shuffle(rows);
    for (std::size_t i = 0; i < extra && i < m; ++i) {
      if (sizes[rows[i]] < c) ++sizes[rows[i]];
    }

    QMatrix q(m, c);
    std::vector<std::size_t> concepts(c);
    for (std::size_t mm = 0; mm < m; ++mm) {
      std::iota(concepts.begin(), concepts.end(), 0);
      rng.shuffle(concepts);
      for (std::size_t j = 0; j < sizes[mm]; ++j) q.set(mm, concepts[j], 1);
    }

    bool covered = true;
    for (std::size_t cc = 0; cc < c && covered; ++cc) {
      bool any = false;
      for (std::size_t mm = 0; mm < m; ++mm) any = any || q.at(mm, cc) == 1;
      covered = any;
    }
    if (covered) return q;
  }
  throw ValidationError(
      "gen_qmatrix: could not cover every concept; spec infeasible");
}

GroundTruth gen_dina(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  GroundTruth gt;
  gt.spec = spec;
  gt.dataset.n_students = spec.n_students;
  gt.dataset.n_exercises = spec.n_exercises;
  gt.dataset.n_concepts = spec.n_concepts;
  gt.dataset.q = gen_qmatrix(spec, rng);

  gt.alpha = DenseMatrix(spec.n_students, spec.n_concepts);
  for (auto& v : gt.alpha.values) v = rng.bernoulli(0.5) ? 1.0 : 0.0;

  gt.dataset.logs.reserve(spec.n_students * spec.n_exercises);
  for (std::size_t n = 0; n < spec.n_students; ++n) {
    for (std::size_t m = 0; m < spec.n_exercises; ++m) {
      double eta = 1.0;
      for (std::size_t c = 0; c < spec.n_concepts; ++c) {
        if (gt.dataset.q.at(m, c) == 1) eta *= gt.alpha[n][c];
      }
      const double p = (1.0 - spec.slip) * eta + spec.guess * (1.0 - eta);
      gt.dataset.logs.push_back({n, m, rng.bernoulli(p) ? 1.0 : 0.0});
    }
  }
  gt.dataset.validate();
  return gt;
}

GroundTruth gen_irt(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  GroundTruth gt;
  gt.spec = spec;
  gt.dataset.n_students = spec.n_students;
  gt.dataset.n_exercises = spec.n_exercises;
  gt.dataset.n_concepts = spec.n_concepts;
  gt.dataset.q = gen_qmatrix(spec, rng);

  gt.theta.resize(spec.n_students);
  for (auto& t : gt.theta) t = rng.normal(0.0, spec.ability_sd);
  gt.diff.resize(spec.n_exercises);
  for (auto& b : gt.diff) b = rng.normal(0.0, 1.0);
  gt.disc.resize(spec.n_exercises);
  for (auto& a : gt.disc) a = std::max(0.2, std::abs(rng.normal(1.0, 0.5)));

  gt.dataset.logs.reserve(spec.n_students * spec.n_exercises);
  for (std::size_t n = 0; n < spec.n_students; ++n) {
    for (std::size_t m = 0; m < spec.n_exercises; ++m) {
      const double p = sigmoid(gt.disc[m] * (gt.theta[n] - gt.diff[m]));
      gt.dataset.logs.push_back({n, m, rng.bernoulli(p) ? 1.0 : 0.0});
    }
  }
  gt.dataset.validate();
  return gt;
}

GroundTruth generate(const SynthSpec& spec) {
  return spec.process == SynthProcess::dina ? gen_dina(spec) : gen_irt(spec);
}

void write_ground_truth(const GroundTruth& gt, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_logs(dir + "/logs.csv", gt.dataset.logs);
  write_qmatrix(dir + "/q.csv", gt.dataset.q);

  nlohmann::json j;
  j["process"] = gt.spec.process == SynthProcess::dina ? "dina" : "irt";
  j["n_students"] = gt.spec.n_students;
  j["n_exercises"] = gt.spec.n_exercises;
  j["n_concepts"] = gt.spec.n_concepts;
  j["concepts_per_exercise"] = gt.spec.concepts_per_exercise;
  j["seed"] = gt.spec.seed;
  if (gt.spec.process == SynthProcess::dina) {
    j["slip"] = gt.spec.slip;
    j["guess"] = gt.spec.guess;
    auto alpha = nlohmann::json::array();
    for (std::size_t n = 0; n < gt.alpha.rows; ++n) {
      auto row = nlohmann::json::array();
      for (std::size_t c = 0; c < gt.alpha.cols; ++c) {
        row.push_back(static_cast<int>(gt.alpha[n][c]));
      }
      alpha.push_back(std::move(row));
    }
    j["alpha"] = std::move(alpha);
  } else {
    j["ability_sd"] = gt.spec.ability_sd;
    j["theta"] = gt.theta;
    j["disc"] = gt.disc;
    j["diff"] = gt.diff;
  }

  std::ofstream out(dir + "/truth.json");
  if (!out) throw ValidationError("cannot write " + dir + "/truth.json");
  out << j.dump(2) << '\n';
}

}  // namespace egnn
