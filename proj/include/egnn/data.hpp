#pragma once
// Response-log datasets, Q-matrices, id maps, stats, and fold plans.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "egnn/errors.hpp"

namespace egnn {

struct ResponseLog {
  std::size_t student = 0;
  std::size_t exercise = 0;
  double score = 0.0;  // in [0, 1]; binary datasets use exactly 0 or 1

  bool operator==(const ResponseLog&) const = default;
};

// Correctness convention: a score >= 0.5 counts as a correct answer when
// building features; a score > 0.5 counts as a positive label for training
// targets and metrics. Binary data is unaffected.
inline bool is_correct(double score) { return score >= 0.5; }
inline int label_of(double score) { return score > 0.5 ? 1 : 0; }

// Binary exercise-by-concept matrix; every row tags at least one concept.
struct QMatrix {
  std::size_t rows = 0;  // exercises
  std::size_t cols = 0;  // concepts
  std::vector<std::uint8_t> entries;  // row-major

  QMatrix() = default;
  QMatrix(std::size_t m, std::size_t c)
      : rows(m), cols(c), entries(m * c, 0) {}

  std::uint8_t at(std::size_t m, std::size_t c) const {
    return entries[m * cols + c];
  }
  void set(std::size_t m, std::size_t c, std::uint8_t v) {
    entries[m * cols + c] = v;
  }
  std::size_t row_sum(std::size_t m) const {
    std::size_t s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += at(m, c);
    return s;
  }

  // Throws ValidationError on an all-zero row.
  void validate() const;

  bool operator==(const QMatrix&) const = default;
};

struct Dataset {
  std::size_t n_students = 0;
  std::size_t n_exercises = 0;
  std::size_t n_concepts = 0;
  std::vector<ResponseLog> logs;
  QMatrix q;

  // Checks dimensions, index ranges, score ranges, pair uniqueness.
  void validate() const;
};

struct DatasetStats {
  std::size_t n_students = 0;
  std::size_t n_exercises = 0;
  std::size_t n_concepts = 0;
  std::size_t n_logs = 0;
  double concepts_per_exercise = 0.0;  // mean Q row sum
  double avg_log = 0.0;  // sum over logs of tagged-concept counts / (N*C)
};

DatasetStats dataset_stats(const Dataset& ds);

// Dense index <-> raw id bookkeeping for one id column.
struct IdMap {
  std::vector<std::string> raw;  // dense index -> raw id string
  bool identity = false;         // raw ids were already dense integers
};

struct LoadedLogs {
  std::vector<ResponseLog> logs;
  std::size_t n_students = 0;
  std::size_t n_exercises = 0;
  IdMap students;
  IdMap exercises;
};

// CSV rows `student_id,exercise_id,score`, optional header. Raw ids may be
// arbitrary strings; they are densely re-indexed. When every raw id in a
// column is a nonnegative integer the integer itself is kept as the dense
// index (so files written with dense ids round-trip), otherwise ids are
// assigned in first-appearance order.
LoadedLogs load_logs(const std::string& path);

// CSV of M rows x C comma-separated binary values.
QMatrix load_qmatrix(const std::string& path);

// Loads logs + Q-matrix into a validated Dataset. M and C come from the
// Q-matrix; the log file may reference only exercises with a Q row.
struct LoadedDataset {
  Dataset ds;
  IdMap students;
  IdMap exercises;
};
LoadedDataset load_dataset(const std::string& logs_path,
                           const std::string& q_path);

// Canonical writers (dense integer ids, shortest round-trip score format).
void write_logs(const std::string& path, const std::vector<ResponseLog>& logs);
void write_qmatrix(const std::string& path, const QMatrix& q);
void write_id_map(const std::string& path, const IdMap& ids);

// FNV-1a over the id map contents; lets checkpoints validate compatibility.
std::uint64_t id_map_hash(const IdMap& students, const IdMap& exercises);

struct FoldPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> assignments;  // per log, fold id in [0, k)

  std::vector<std::size_t> test_indices(std::size_t fold) const;
  std::vector<std::size_t> train_indices(std::size_t fold) const;
  std::uint64_t hash() const;  // FNV-1a over assignments
};

// Deterministic stratified k-fold partition: each student's logs are dealt
// round-robin from a seeded offset, so every student with >= k logs appears
// in every fold's training portion. Each fold's test share is 1/k; the
// holdout_ratio argument is validated against (0, 1) and k=5 realizes the
// 80/20 split.
FoldPlan make_folds(const Dataset& ds, std::size_t k, std::uint64_t seed,
                    double holdout_ratio = 0.2);

}  // namespace egnn
