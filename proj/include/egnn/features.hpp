#pragma once
// The four channel inputs derived from training logs and the Q-matrix:
// student->exercise, student->concept, exercise->student, exercise->concept.
// Built from training logs only; held-out pairs stay zero.

#include <span>
#include <string>

#include "egnn/data.hpp"
#include "egnn/matrix.hpp"

namespace egnn {

enum class EncodingMode {
  binary_correct,  // 1 = answered correctly, 0 otherwise (default)
  signed_mode,     // +1 correct, -1 incorrect/never-correct, 0 untouched
};

struct FeatureMaps {
  DenseMatrix x_se;  // N x M
  DenseMatrix x_sk;  // N x C
  DenseMatrix x_es;  // M x N, transpose of x_se
  DenseMatrix x_ek;  // M x C, equals Q
  EncodingMode mode = EncodingMode::binary_correct;
};

// train_logs index into ds.logs; every other pair stays zero in x_se/x_es.
FeatureMaps build_feature_maps(const Dataset& ds,
                               std::span<const std::size_t> train_logs,
                               EncodingMode mode = EncodingMode::binary_correct);

struct RowViews {
  std::span<const double> se;  // student n over exercises
  std::span<const double> sk;  // student n over concepts
  std::span<const double> es;  // exercise m over students
  std::span<const double> ek;  // exercise m over concepts
};

RowViews row_views(const FeatureMaps& fm, std::size_t student,
                   std::size_t exercise);

// Debug dump: writes x_se.csv, x_sk.csv, x_es.csv, x_ek.csv under dir.
void dump_feature_maps(const FeatureMaps& fm, const std::string& dir);

}  // namespace egnn
