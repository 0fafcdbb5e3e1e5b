#pragma once
// Evaluation metrics (Acc, AUPR, AUC, F1, Pre, Rec) and nonparametric
// model-comparison statistics (Win/Tie/Loss, Wilcoxon signed-rank,
// Friedman mean ranks).

#include <optional>
#include <string>
#include <vector>

#include "egnn/errors.hpp"

namespace egnn {

struct ScoredPairs {
  std::vector<int> labels;      // 0 or 1
  std::vector<double> scores;   // in [0, 1]

  void validate() const;
  std::size_t size() const { return labels.size(); }
};

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// Prediction convention: score > threshold is positive; a score of exactly
// 0.5 therefore classifies as negative.
ConfusionCounts confusion(const ScoredPairs& sp, double threshold = 0.5);

double accuracy(const ScoredPairs& sp);

// Tie-averaged rank AUC: P(score_pos > score_neg) + 0.5 P(equal).
// Throws ValidationError on single-class input (undefined, not 0.5).
double roc_auc(const ScoredPairs& sp);

// Area under the precision-recall curve, step-integrated over recall at
// each distinct descending score threshold (average-precision convention).
// Throws ValidationError when there are no positive labels.
double aupr(const ScoredPairs& sp);

struct PreRecF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};
// Zero denominators yield 0 by convention.
PreRecF1 precision_recall_f1(const ScoredPairs& sp, double threshold = 0.5);

struct MetricsReport {
  double acc = 0.0, aupr = 0.0, auc = 0.0, f1 = 0.0, pre = 0.0, rec = 0.0;
  ConfusionCounts counts;
};
MetricsReport compute_report(const ScoredPairs& sp);

// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
// are dropped; at least 5 nonzero differences are required. Exact
// distribution (DP over signed rank sums, valid with tie-averaged ranks)
// for n <= 25, normal approximation with tie and continuity corrections
// beyond that.
double wilcoxon_signed_rank(const std::vector<double>& x,
                            const std::vector<double>& y);

// Within each row, models are ranked by value, rank 1 = largest (all
// metrics here are larger-is-better); ties receive average ranks. Returns
// the per-model mean rank across rows.
std::vector<double> friedman_ranks(
    const std::vector<std::vector<double>>& rows_by_model);

struct WinTieLoss {
  std::size_t win = 0, tie = 0, loss = 0;
};
// Per (row, competitor): win when reference > competitor + eps, tie within
// eps, loss otherwise. Returns per-competitor tallies plus the total.
struct WinTieLossResult {
  std::vector<WinTieLoss> per_competitor;
  WinTieLoss total;
};
WinTieLossResult win_tie_loss(
    const std::vector<double>& reference,
    const std::vector<std::vector<double>>& competitors,
    double epsilon = 1e-4);

// Comparison of several models over (dataset, metric) rows.
struct ComparisonTable {
  std::vector<std::string> row_labels;   // e.g. "synth-dina/auc"
  std::vector<std::string> model_names;  // first model is the reference
  std::vector<std::vector<double>> values;  // [row][model]

  WinTieLossResult wtl;                     // reference vs each other model
  std::vector<std::optional<double>> wilcoxon_p;  // vs reference; nullopt when
                                                  // the test is undefined
  std::vector<double> mean_ranks;

  void compute_statistics(double epsilon = 1e-4);
};

}  // namespace egnn
