#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mmnas {

struct ConfusionCounts {
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
};

struct BasicMetrics {
  double acc = 0, sen = 0, spe = 0, pre = 0, f1 = 0;
};

/// Accuracy, sensitivity, specificity, precision, F1. Precision is 0 when
/// nothing is predicted positive; F1 is 0 when precision and sensitivity
/// are both 0. Requires at least one positive and one negative case.
BasicMetrics binary_metrics(const ConfusionCounts& counts);

struct ScoredCase {
  std::string id;
  int label = 0;
  double score = 0.0;  // probability of the positive class
};

struct RocPoint {
  double threshold = 0, fpr = 0, tpr = 0;
};

/// ROC swept over the unique scores (predict positive when score >=
/// threshold) with a +infinity sentinel, and the AUC as Mann-Whitney
/// pairwise concordance with half credit for ties. The two agree: the
/// trapezoidal area under the returned curve equals the returned AUC.
std::pair<std::vector<RocPoint>, double> roc_and_auc(std::span<const ScoredCase> cases);

struct FoldReport {
  int fold = 0;
  ConfusionCounts counts;
  BasicMetrics metrics;
  double auc = 0.0;
};

struct EvalReport {
  ConfusionCounts counts;
  BasicMetrics metrics;
  double auc = 0.0;
  std::vector<RocPoint> roc;
  std::vector<FoldReport> per_fold;
};

/// Pools all test-fold cases (ids must be disjoint across folds),
/// thresholds scores at `threshold` for the confusion counts, and also
/// reports each fold separately.
EvalReport aggregate_cv(const std::vector<std::vector<ScoredCase>>& per_fold_cases,
                        double threshold = 0.5);

/// Report over a single pooled case list (no per-fold rows).
EvalReport evaluate_cases(std::span<const ScoredCase> cases, double threshold = 0.5);

void write_report_csv(std::span<const std::pair<std::string, EvalReport>> rows,
                      const std::filesystem::path& path);
void write_roc_csv(std::span<const RocPoint> roc, const std::filesystem::path& path);
void write_scores_csv(std::span<const ScoredCase> cases, const std::filesystem::path& path);
std::vector<ScoredCase> read_scores_csv(const std::filesystem::path& path);

}  // namespace mmnas
