#include "egnn/features.hpp"

#include <filesystem>
#include <fstream>

namespace egnn {

FeatureMaps build_feature_maps(const Dataset& ds,
                               std::span<const std::size_t> train_logs,
                               EncodingMode mode) {
  const std::size_t n = ds.n_students;
  const std::size_t m = ds.n_exercises;
  const std::size_t c = ds.n_concepts;

  FeatureMaps fm;
  fm.mode = mode;
  fm.x_se = DenseMatrix(n, m);
  fm.x_sk = DenseMatrix(n, c);
  fm.x_es = DenseMatrix(m, n);
  fm.x_ek = DenseMatrix(m, c);

  for (std::size_t mm = 0; mm < m; ++mm) {
    for (std::size_t cc = 0; cc < c; ++cc) {
      fm.x_ek[mm][cc] = static_cast<double>(ds.q.at(mm, cc));
    }
  }

  // Per (student, concept): whether any training attempt / correct answer
  // touched the concept. Correct wins over incorrect for signed mode.
  DenseMatrix sk_correct(n, c);
  DenseMatrix sk_attempt(n, c);

  for (std::size_t idx : train_logs) {
    if (idx >= ds.logs.size()) {
      throw ValidationError("train log index out of range");
    }
    const ResponseLog& log = ds.logs[idx];
    const bool correct = is_correct(log.score);
    double se_val = 0.0;
    switch (mode) {
      case EncodingMode::binary_correct:
        se_val = correct ? 1.0 : 0.0;
        break;
      case EncodingMode::signed_mode:
        se_val = correct ? 1.0 : -1.0;
        break;
    }
    fm.x_se[log.student][log.exercise] = se_val;
    fm.x_es[log.exercise][log.student] = se_val;
    for (std::size_t cc = 0; cc < c; ++cc) {
      if (ds.q.at(log.exercise, cc) == 0) continue;
      sk_attempt[log.student][cc] = 1.0;
      if (correct) sk_correct[log.student][cc] = 1.0;
    }
  }

  for (std::size_t nn = 0; nn < n; ++nn) {
    for (std::size_t cc = 0; cc < c; ++cc) {
      if (sk_correct[nn][cc] > 0.0) {
        fm.x_sk[nn][cc] = 1.0;
      } else if (sk_attempt[nn][cc] > 0.0 &&
                 mode == EncodingMode::signed_mode) {
        fm.x_sk[nn][cc] = -1.0;
      }
    }
  }
  return fm;
}

RowViews row_views(const FeatureMaps& fm, std::size_t student,
                   std::size_t exercise) {
  if (student >= fm.x_se.rows) {
    throw std::out_of_range("row_views: student index out of range");
  }
  if (exercise >= fm.x_es.rows) {
    throw std::out_of_range("row_views: exercise index out of range");
  }
  return {fm.x_se.row(student), fm.x_sk.row(student), fm.x_es.row(exercise),
          fm.x_ek.row(exercise)};
}

namespace {
void dump_matrix(const DenseMatrix& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (c > 0) out << ',';
      out << m[r][c];
    }
    out << '\n';
  }
}
}  // namespace

void dump_feature_maps(const FeatureMaps& fm, const std::string& dir) {
  std::filesystem::create_directories(dir);
  dump_matrix(fm.x_se, dir + "/x_se.csv");
  dump_matrix(fm.x_sk, dir + "/x_sk.csv");
  dump_matrix(fm.x_es, dir + "/x_es.csv");
  dump_matrix(fm.x_ek, dir + "/x_ek.csv");
}

}  // namespace egnn
