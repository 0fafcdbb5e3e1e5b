#include "egnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace egnn {

void ScoredPairs::validate() const {
  if (labels.size() != scores.size()) {
    throw ValidationError("ScoredPairs: labels/scores length mismatch");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw ValidationError("ScoredPairs: label not 0/1");
  }
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) {
      throw ValidationError("ScoredPairs: score outside [0, 1]");
    }
  }
}

ConfusionCounts confusion(const ScoredPairs& sp, double threshold) {
  ConfusionCounts c;
  for (std::size_t i = 0; i < sp.size(); ++i) {
    const bool predicted = sp.scores[i] > threshold;
    const bool actual = sp.labels[i] == 1;
    if (predicted && actual) ++c.tp;
    else if (predicted && !actual) ++c.fp;
    else if (!predicted && actual) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double accuracy(const ScoredPairs& sp) {
  if (sp.size() == 0) throw ValidationError("accuracy: empty input");
  const ConfusionCounts c = confusion(sp);
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(sp.size());
}

double roc_auc(const ScoredPairs& sp) {
  const std::size_t n = sp.size();
  std::size_t pos = 0;
  for (int l : sp.labels) pos += l;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) {
    throw ValidationError("roc_auc undefined for single-class input");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return sp.scores[a] < sp.scores[b];
  });

  // tie-averaged ranks, 1-based
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && sp.scores[order[j + 1]] == sp.scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg;
    i = j + 1;
  }

  double rank_sum_pos = 0.0;
  for (std::size_t idx = 0; idx < n; ++idx) {
    if (sp.labels[idx] == 1) rank_sum_pos += rank[idx];
  }
  const double u = rank_sum_pos -
                   static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double aupr(const ScoredPairs& sp) {
  const std::size_t n = sp.size();
  std::size_t pos = 0;
  for (int l : sp.labels) pos += l;
  if (pos == 0) throw ValidationError("aupr undefined without positives");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return sp.scores[a] > sp.scores[b];
  });

  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && sp.scores[order[j + 1]] == sp.scores[order[i]]) ++j;
    for (std::size_t t = i; t <= j; ++t) {
      if (sp.labels[order[t]] == 1) ++tp;
      else ++fp;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision =
        static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j + 1;
  }
  return ap;
}

PreRecF1 precision_recall_f1(const ScoredPairs& sp, double threshold) {
  if (sp.size() == 0) {
    throw ValidationError("precision_recall_f1: empty input");
  }
  const ConfusionCounts c = confusion(sp, threshold);
  PreRecF1 out;
  out.precision = (c.tp + c.fp) > 0
                      ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp)
                      : 0.0;
  out.recall = (c.tp + c.fn) > 0
                   ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn)
                   : 0.0;
  out.f1 = (out.precision + out.recall) > 0.0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

MetricsReport compute_report(const ScoredPairs& sp) {
  MetricsReport r;
  r.acc = accuracy(sp);
  r.auc = roc_auc(sp);
  r.aupr = aupr(sp);
  const PreRecF1 prf = precision_recall_f1(sp);
  r.pre = prf.precision;
  r.rec = prf.recall;
  r.f1 = prf.f1;
  r.counts = confusion(sp);
  return r;
}

namespace {

double normal_sf(double z) {  // P(Z > z)
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

}  // namespace

double wilcoxon_signed_rank(const std::vector<double>& x,
                            const std::vector<double>& y) {
  if (x.size() != y.size()) {
    throw ValidationError("wilcoxon: length mismatch");
  }
  std::vector<double> diffs;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    if (d != 0.0) diffs.push_back(d);
  }
  const std::size_t n = diffs.size();
  if (n < 5) {
    throw ValidationError(
        "wilcoxon: fewer than 5 nonzero differences");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(diffs[a]) < std::abs(diffs[b]);
  });

  std::vector<double> rank(n);
  std::vector<std::size_t> tie_sizes;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n &&
           std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) {
      ++j;
    }
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg;
    tie_sizes.push_back(j - i + 1);
    i = j + 1;
  }

  double w_plus = 0.0;
  for (std::size_t idx = 0; idx < n; ++idx) {
    if (diffs[idx] > 0.0) w_plus += rank[idx];
  }

  if (n <= 25) {
    // Exact conditional distribution of W+ given the observed (possibly
    // tied) ranks. Ranks are multiples of 1/2, so doubling makes them
    // integers; count[s] = number of sign patterns with doubled sum s.
    std::vector<long> doubled(n);
    long total = 0;
    for (std::size_t idx = 0; idx < n; ++idx) {
      doubled[idx] = std::lround(2.0 * rank[idx]);
      total += doubled[idx];
    }
    std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
    count[0] = 1.0;
    long reach = 0;
    for (std::size_t idx = 0; idx < n; ++idx) {
      const long w = doubled[idx];
      reach += w;
      for (long s = reach; s >= w; --s) {
        count[static_cast<std::size_t>(s)] +=
            count[static_cast<std::size_t>(s - w)];
      }
    }
    const double patterns = std::pow(2.0, static_cast<double>(n));
    const long obs = std::lround(2.0 * w_plus);
    double le = 0.0, ge = 0.0;
    for (long s = 0; s <= total; ++s) {
      const double c = count[static_cast<std::size_t>(s)];
      if (s <= obs) le += c;
      if (s >= obs) ge += c;
    }
    const double p = 2.0 * std::min(le, ge) / patterns;
    return std::min(1.0, p);
  }

  const double nd = static_cast<double>(n);
  const double mean = nd * (nd + 1.0) / 4.0;
  double tie_term = 0.0;
  for (std::size_t t : tie_sizes) {
    const double td = static_cast<double>(t);
    tie_term += td * td * td - td;
  }
  const double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_term / 48.0;
  const double sd = std::sqrt(var);
  // continuity correction toward the mean
  double z;
  if (w_plus > mean) {
    z = (w_plus - mean - 0.5) / sd;
  } else if (w_plus < mean) {
    z = (w_plus - mean + 0.5) / sd;
  } else {
    z = 0.0;
  }
  return std::min(1.0, 2.0 * normal_sf(std::abs(z)));
}

std::vector<double> friedman_ranks(
    const std::vector<std::vector<double>>& rows_by_model) {
  if (rows_by_model.size() < 2) {
    throw ValidationError("friedman_ranks: need at least 2 rows");
  }
  const std::size_t n_models = rows_by_model.front().size();
  if (n_models < 2) {
    throw ValidationError("friedman_ranks: need at least 2 models");
  }
  std::vector<double> sums(n_models, 0.0);
  for (const auto& row : rows_by_model) {
    if (row.size() != n_models) {
      throw ValidationError("friedman_ranks: ragged row");
    }
    for (double v : row) {
      if (!std::isfinite(v)) {
        throw ValidationError("friedman_ranks: missing cell");
      }
    }
    std::vector<std::size_t> order(n_models);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return row[a] > row[b];  // rank 1 = largest
    });
    std::size_t i = 0;
    while (i < n_models) {
      std::size_t j = i;
      while (j + 1 < n_models && row[order[j + 1]] == row[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t t = i; t <= j; ++t) sums[order[t]] += avg;
      i = j + 1;
    }
  }
  for (double& s : sums) s /= static_cast<double>(rows_by_model.size());
  return sums;
}

WinTieLossResult win_tie_loss(
    const std::vector<double>& reference,
    const std::vector<std::vector<double>>& competitors, double epsilon) {
  WinTieLossResult result;
  result.per_competitor.resize(competitors.size());
  for (std::size_t c = 0; c < competitors.size(); ++c) {
    if (competitors[c].size() != reference.size()) {
      throw ValidationError("win_tie_loss: misaligned rows");
    }
    for (std::size_t r = 0; r < reference.size(); ++r) {
      const double diff = reference[r] - competitors[c][r];
      if (diff > epsilon) {
        ++result.per_competitor[c].win;
      } else if (diff < -epsilon) {
        ++result.per_competitor[c].loss;
      } else {
        ++result.per_competitor[c].tie;
      }
    }
    result.total.win += result.per_competitor[c].win;
    result.total.tie += result.per_competitor[c].tie;
    result.total.loss += result.per_competitor[c].loss;
  }
  return result;
}

void ComparisonTable::compute_statistics(double epsilon) {
  const std::size_t n_models = model_names.size();
  if (values.size() != row_labels.size()) {
    throw ValidationError("ComparisonTable: row count mismatch");
  }
  for (const auto& row : values) {
    if (row.size() != n_models) {
      throw ValidationError("ComparisonTable: incomplete matrix");
    }
  }

  std::vector<double> ref;
  std::vector<std::vector<double>> others(n_models - 1);
  for (const auto& row : values) {
    ref.push_back(row[0]);
    for (std::size_t m = 1; m < n_models; ++m) {
      others[m - 1].push_back(row[m]);
    }
  }
  wtl = win_tie_loss(ref, others, epsilon);

  wilcoxon_p.assign(n_models - 1, std::nullopt);
  for (std::size_t m = 1; m < n_models; ++m) {
    try {
      wilcoxon_p[m - 1] = wilcoxon_signed_rank(ref, others[m - 1]);
    } catch (const ValidationError&) {
      // undefined (too few nonzero differences); leave empty
    }
  }

  mean_ranks = friedman_ranks(values);
}

}  // namespace egnn
