#include "egnn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "egnn/rng.hpp"

namespace egnn {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

bool parse_double(const std::string& s, double& out) {
  const char* begin = s.data();
  const char* end = begin + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end && !s.empty();
}

bool parse_index(const std::string& s, std::size_t& out) {
  if (s.empty() || s[0] == '-' || s[0] == '+') return false;
  const char* begin = s.data();
  const char* end = begin + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

constexpr std::uint64_t kFnvBasis = 0xCBF29CE484222325ull;

struct RawTriple {
  std::string student;
  std::string exercise;
  double score;
  std::size_t line;
};

// Dense mapping for one id column: integers keep their own value when the
// whole column is integral, everything else gets first-appearance order.
IdMap build_id_map(const std::vector<const std::string*>& raw_ids,
                   std::vector<std::size_t>& dense_out, std::size_t& n_out) {
  IdMap map;
  bool all_integer = true;
  std::size_t max_id = 0;
  for (const auto* id : raw_ids) {
    std::size_t v;
    if (!parse_index(*id, v)) {
      all_integer = false;
      break;
    }
    max_id = std::max(max_id, v);
  }
  dense_out.resize(raw_ids.size());
  if (all_integer && !raw_ids.empty()) {
    map.identity = true;
    n_out = max_id + 1;
    map.raw.resize(n_out);
    for (std::size_t i = 0; i < n_out; ++i) map.raw[i] = std::to_string(i);
    for (std::size_t i = 0; i < raw_ids.size(); ++i) {
      std::size_t v;
      parse_index(*raw_ids[i], v);
      dense_out[i] = v;
    }
    return map;
  }
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < raw_ids.size(); ++i) {
    auto [it, inserted] = seen.emplace(*raw_ids[i], map.raw.size());
    if (inserted) map.raw.push_back(*raw_ids[i]);
    dense_out[i] = it->second;
  }
  n_out = map.raw.size();
  return map;
}

std::string format_score(double score) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), score);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace

void QMatrix::validate() const {
  if (rows == 0 || cols == 0) {
    throw ValidationError("Q-matrix must be nonempty");
  }
  for (std::size_t m = 0; m < rows; ++m) {
    if (row_sum(m) == 0) {
      throw ValidationError("Q-matrix: exercise " + std::to_string(m) +
                            " tags no concept");
    }
  }
}

void Dataset::validate() const {
  if (n_students == 0 || n_exercises == 0 || n_concepts == 0) {
    throw ValidationError("dataset dimensions must be positive");
  }
  if (q.rows != n_exercises || q.cols != n_concepts) {
    throw ValidationError("Q-matrix shape does not match dataset dimensions");
  }
  q.validate();
  std::unordered_set<std::uint64_t> pairs;
  pairs.reserve(logs.size());
  for (const auto& log : logs) {
    if (log.student >= n_students || log.exercise >= n_exercises) {
      throw ValidationError("log references out-of-range index");
    }
    if (!(log.score >= 0.0 && log.score <= 1.0)) {
      throw ValidationError("log score outside [0, 1]");
    }
    const std::uint64_t key =
        (static_cast<std::uint64_t>(log.student) << 32) | log.exercise;
    if (!pairs.insert(key).second) {
      throw ValidationError("duplicate (student, exercise) pair in logs");
    }
  }
}

DatasetStats dataset_stats(const Dataset& ds) {
  DatasetStats st;
  st.n_students = ds.n_students;
  st.n_exercises = ds.n_exercises;
  st.n_concepts = ds.n_concepts;
  st.n_logs = ds.logs.size();
  double tag_total = 0.0;
  for (std::size_t m = 0; m < ds.q.rows; ++m) tag_total += ds.q.row_sum(m);
  st.concepts_per_exercise = ds.q.rows > 0 ? tag_total / ds.q.rows : 0.0;
  double incidences = 0.0;
  for (const auto& log : ds.logs) incidences += ds.q.row_sum(log.exercise);
  const double denom =
      static_cast<double>(ds.n_students) * static_cast<double>(ds.n_concepts);
  st.avg_log = denom > 0.0 ? incidences / denom : 0.0;
  return st;
}

LoadedLogs load_logs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open log file: " + path);

  std::vector<RawTriple> triples;
  std::string line;
  std::size_t line_no = 0;
  bool first_content_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    auto fields = split_csv(t);
    if (fields.size() != 3) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": expected student_id,exercise_id,score");
    }
    double score;
    if (!parse_double(fields[2], score)) {
      if (first_content_line) {  // optional header
        first_content_line = false;
        continue;
      }
      throw ValidationError("line " + std::to_string(line_no) +
                            ": malformed score '" + fields[2] + "'");
    }
    first_content_line = false;
    if (score < 0.0 || score > 1.0) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": score out of range [0,1]");
    }
    triples.push_back({fields[0], fields[1], score, line_no});
  }
  if (triples.empty()) throw ValidationError("log file has no data rows");

  // duplicate detection on raw pairs
  std::unordered_set<std::string> seen_pairs;
  seen_pairs.reserve(triples.size());
  for (const auto& tr : triples) {
    if (!seen_pairs.insert(tr.student + "\x1f" + tr.exercise).second) {
      throw ValidationError("line " + std::to_string(tr.line) +
                            ": duplicate (student, exercise) pair");
    }
  }

  std::vector<const std::string*> sids, eids;
  sids.reserve(triples.size());
  eids.reserve(triples.size());
  for (const auto& tr : triples) {
    sids.push_back(&tr.student);
    eids.push_back(&tr.exercise);
  }

  LoadedLogs out;
  std::vector<std::size_t> sdense, edense;
  out.students = build_id_map(sids, sdense, out.n_students);
  out.exercises = build_id_map(eids, edense, out.n_exercises);
  out.logs.reserve(triples.size());
  for (std::size_t i = 0; i < triples.size(); ++i) {
    out.logs.push_back({sdense[i], edense[i], triples[i].score});
  }
  return out;
}

QMatrix load_qmatrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open Q-matrix file: " + path);
  std::vector<std::vector<std::uint8_t>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    auto fields = split_csv(t);
    std::vector<std::uint8_t> row;
    row.reserve(fields.size());
    for (const auto& f : fields) {
      if (f == "0") {
        row.push_back(0);
      } else if (f == "1") {
        row.push_back(1);
      } else {
        throw ValidationError("Q-matrix line " + std::to_string(line_no) +
                              ": non-binary entry '" + f + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ValidationError("Q-matrix line " + std::to_string(line_no) +
                            ": ragged row");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError("Q-matrix file is empty");

  QMatrix q(rows.size(), rows.front().size());
  for (std::size_t m = 0; m < q.rows; ++m) {
    for (std::size_t c = 0; c < q.cols; ++c) q.set(m, c, rows[m][c]);
  }
  q.validate();
  return q;
}

LoadedDataset load_dataset(const std::string& logs_path,
                           const std::string& q_path) {
  QMatrix q = load_qmatrix(q_path);
  LoadedLogs loaded = load_logs(logs_path);
  if (loaded.n_exercises > q.rows) {
    throw ValidationError("logs reference " +
                          std::to_string(loaded.n_exercises) +
                          " exercises but Q-matrix has only " +
                          std::to_string(q.rows) + " rows");
  }
  LoadedDataset out;
  out.ds.n_students = loaded.n_students;
  out.ds.n_exercises = q.rows;
  out.ds.n_concepts = q.cols;
  out.ds.logs = std::move(loaded.logs);
  out.ds.q = std::move(q);
  out.students = std::move(loaded.students);
  out.exercises = std::move(loaded.exercises);
  out.ds.validate();
  return out;
}

void write_logs(const std::string& path,
                const std::vector<ResponseLog>& logs) {
  std::ofstream outf(path);
  if (!outf) throw ValidationError("cannot write log file: " + path);
  for (const auto& log : logs) {
    outf << log.student << ',' << log.exercise << ','
         << format_score(log.score) << '\n';
  }
}

void write_qmatrix(const std::string& path, const QMatrix& q) {
  std::ofstream outf(path);
  if (!outf) throw ValidationError("cannot write Q-matrix file: " + path);
  for (std::size_t m = 0; m < q.rows; ++m) {
    for (std::size_t c = 0; c < q.cols; ++c) {
      if (c > 0) outf << ',';
      outf << static_cast<int>(q.at(m, c));
    }
    outf << '\n';
  }
}

void write_id_map(const std::string& path, const IdMap& ids) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < ids.raw.size(); ++i) j[ids.raw[i]] = i;
  std::ofstream outf(path);
  if (!outf) throw ValidationError("cannot write id map: " + path);
  outf << j.dump(2) << '\n';
}

std::uint64_t id_map_hash(const IdMap& students, const IdMap& exercises) {
  std::uint64_t h = kFnvBasis;
  for (const auto& id : students.raw) h = fnv1a(h, id.data(), id.size() + 1);
  h = fnv1a(h, "|", 1);
  for (const auto& id : exercises.raw) h = fnv1a(h, id.data(), id.size() + 1);
  return h;
}

std::vector<std::size_t> FoldPlan::test_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::train_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] != fold) out.push_back(i);
  }
  return out;
}

std::uint64_t FoldPlan::hash() const {
  std::uint64_t h = fnv1a(kFnvBasis, &k, sizeof(k));
  h = fnv1a(h, assignments.data(),
            assignments.size() * sizeof(std::size_t));
  return h;
}

FoldPlan make_folds(const Dataset& ds, std::size_t k, std::uint64_t seed,
                    double holdout_ratio) {
  if (k < 2) throw ValidationError("fold count must be at least 2");
  if (k > ds.logs.size()) {
    throw ValidationError("fold count exceeds log count");
  }
  if (!(holdout_ratio > 0.0 && holdout_ratio < 1.0)) {
    throw ValidationError("holdout ratio must lie in (0, 1)");
  }

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignments.assign(ds.logs.size(), 0);

  std::vector<std::vector<std::size_t>> by_student(ds.n_students);
  for (std::size_t i = 0; i < ds.logs.size(); ++i) {
    by_student[ds.logs[i].student].push_back(i);
  }

  Rng rng(seed);
  for (auto& indices : by_student) {
    if (indices.empty()) continue;
    rng.shuffle(indices);
    const std::size_t offset = rng.below(k);
    for (std::size_t j = 0; j < indices.size(); ++j) {
      plan.assignments[indices[j]] = (offset + j) % k;
    }
  }
  return plan;
}

}  // namespace egnn
