#pragma once
// Synthetic datasets with known latent ground truth, generated from DINA
// and IRT response processes. Full response matrices are emitted (every
// student answers every exercise); sparsity comes from the fold mechanism.

#include <cstdint>
#include <string>

#include "egnn/data.hpp"
#include "egnn/matrix.hpp"
#include "egnn/rng.hpp"

namespace egnn {

enum class SynthProcess { dina, irt };

struct SynthSpec {
  std::size_t n_students = 500;
  std::size_t n_exercises = 40;
  std::size_t n_concepts = 8;
  double concepts_per_exercise = 2.0;
  SynthProcess process = SynthProcess::dina;
  double slip = 0.1;        // dina
  double guess = 0.1;       // dina
  double ability_sd = 1.0;  // irt
  std::uint64_t seed = 42;

  void validate() const;
};

struct GroundTruth {
  SynthSpec spec;
  Dataset dataset;
  // dina
  DenseMatrix alpha;  // N x C latent mastery, entries 0/1
  // irt
  std::vector<double> theta;  // N
  std::vector<double> disc;   // M, discrimination a
  std::vector<double> diff;   // M, difficulty b
};

// Each exercise tags a seeded-random concept subset; row sizes are spread
// so the mean hits concepts_per_exercise, minimum 1; retries until every
// concept is tagged by at least one exercise.
QMatrix gen_qmatrix(const SynthSpec& spec, Rng& rng);

// alpha ~ Bernoulli(0.5); eta = prod of alpha over tagged concepts;
// response ~ Bernoulli((1-slip)*eta + guess*(1-eta)).
GroundTruth gen_dina(const SynthSpec& spec);

// theta ~ N(0, ability_sd^2), diff ~ N(0,1), disc = |N(1, 0.5^2)| floored
// at 0.2 (the 0.25 second moment read as a variance);
// response ~ Bernoulli(sigmoid(disc * (theta - diff))).
GroundTruth gen_irt(const SynthSpec& spec);

GroundTruth generate(const SynthSpec& spec);

// Writes logs.csv, q.csv, truth.json under dir (created if needed).
void write_ground_truth(const GroundTruth& gt, const std::string& dir);

}  // namespace egnn
