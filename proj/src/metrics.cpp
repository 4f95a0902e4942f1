#include "mmnas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>

namespace mmnas {

BasicMetrics binary_metrics(const ConfusionCounts& c) {
  const std::size_t pos = c.tp + c.fn;
  const std::size_t neg = c.tn + c.fp;
  if (pos == 0 || neg == 0) {
    throw std::invalid_argument("binary_metrics: need at least one positive and one negative case");
  }
  BasicMetrics m;
  m.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(pos + neg);
  m.sen = static_cast<double>(c.tp) / static_cast<double>(pos);
  m.spe = static_cast<double>(c.tn) / static_cast<double>(neg);
  m.pre = (c.tp + c.fp) == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  m.f1 = (m.pre + m.sen) == 0.0 ? 0.0 : 2.0 * m.pre * m.sen / (m.pre + m.sen);
  return m;
}

std::pair<std::vector<RocPoint>, double> roc_and_auc(std::span<const ScoredCase> cases) {
  std::size_t pos = 0, neg = 0;
  for (const ScoredCase& c : cases) {
    if (c.label != 0 && c.label != 1) {
      throw std::invalid_argument("roc_and_auc: case '" + c.id + "' has label " +
                                  std::to_string(c.label));
    }
    (c.label == 1 ? pos : neg) += 1;
  }
  if (pos == 0 || neg == 0) {
    throw std::invalid_argument("roc_and_auc: both classes must be present");
  }

  // curve: thresholds are +inf then every distinct score, descending
  std::set<double, std::greater<double>> thresholds;
  for (const ScoredCase& c : cases) thresholds.insert(c.score);
  std::vector<RocPoint> roc;
  roc.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  for (double t : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (const ScoredCase& c : cases) {
      if (c.score >= t) (c.label == 1 ? tp : fp) += 1;
    }
    roc.push_back({t, static_cast<double>(fp) / static_cast<double>(neg),
                   static_cast<double>(tp) / static_cast<double>(pos)});
  }

  // pairwise concordance, ties half credit
  double concordant = 0.0;
  for (const ScoredCase& p : cases) {
    if (p.label != 1) continue;
    for (const ScoredCase& n : cases) {
      if (n.label != 0) continue;
      if (p.score > n.score) {
        concordant += 1.0;
      } else if (p.score == n.score) {
        concordant += 0.5;
      }
    }
  }
  const double auc = concordant / (static_cast<double>(pos) * static_cast<double>(neg));
  return {std::move(roc), auc};
}

namespace {

ConfusionCounts count_at_threshold(std::span<const ScoredCase> cases, double threshold) {
  ConfusionCounts c;
  for (const ScoredCase& s : cases) {
    const bool predicted = s.score >= threshold;
    if (s.label == 1) {
      (predicted ? c.tp : c.fn) += 1;
    } else {
      (predicted ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

}  // namespace

EvalReport evaluate_cases(std::span<const ScoredCase> cases, double threshold) {
  EvalReport report;
  report.counts = count_at_threshold(cases, threshold);
  report.metrics = binary_metrics(report.counts);
  auto [roc, auc] = roc_and_auc(cases);
  report.roc = std::move(roc);
  report.auc = auc;
  return report;
}

EvalReport aggregate_cv(const std::vector<std::vector<ScoredCase>>& per_fold_cases,
                        double threshold) {
  std::vector<ScoredCase> pooled;
  std::set<std::string> seen;
  for (const auto& fold : per_fold_cases) {
    for (const ScoredCase& c : fold) {
      if (!seen.insert(c.id).second) {
        throw std::invalid_argument("aggregate_cv: duplicate id '" + c.id + "' across folds");
      }
      pooled.push_back(c);
    }
  }
  EvalReport report = evaluate_cases(pooled, threshold);
  for (std::size_t f = 0; f < per_fold_cases.size(); ++f) {
    FoldReport fr;
    fr.fold = static_cast<int>(f);
    fr.counts = count_at_threshold(per_fold_cases[f], threshold);
    fr.metrics = binary_metrics(fr.counts);
    fr.auc = roc_and_auc(per_fold_cases[f]).second;
    report.per_fold.push_back(fr);
  }
  return report;
}

namespace {

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string full17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_report_csv(std::span<const std::pair<std::string, EvalReport>> rows,
                      const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("report: cannot open '" + path.string() + "' for writing");
  f << "method,acc,sen,spe,pre,f1,auc\n";
  for (const auto& [name, r] : rows) {
    f << name << ',' << fixed6(r.metrics.acc) << ',' << fixed6(r.metrics.sen) << ','
      << fixed6(r.metrics.spe) << ',' << fixed6(r.metrics.pre) << ',' << fixed6(r.metrics.f1) << ','
      << fixed6(r.auc) << '\n';
  }
}

void write_roc_csv(std::span<const RocPoint> roc, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("roc: cannot open '" + path.string() + "' for writing");
  f << "threshold,fpr,tpr\n";
  for (const RocPoint& p : roc) {
    f << full17(p.threshold) << ',' << full17(p.fpr) << ',' << full17(p.tpr) << '\n';
  }
}

void write_scores_csv(std::span<const ScoredCase> cases, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("scores: cannot open '" + path.string() + "' for writing");
  f << "id,label,score\n";
  for (const ScoredCase& c : cases) {
    f << c.id << ',' << c.label << ',' << full17(c.score) << '\n';
  }
}

std::vector<ScoredCase> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("scores: cannot open '" + path.string() + "'");
  std::vector<ScoredCase> cases;
  std::string line;
  bool header = true;
  while (std::getline(f, line)) {
    if (header) {
      header = false;
      if (line != "id,label,score") {
        throw std::invalid_argument("scores: unexpected header in '" + path.string() + "'");
      }
      continue;
    }
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw std::invalid_argument("scores: malformed row in '" + path.string() + "': " + line);
    }
    ScoredCase c;
    c.id = line.substr(0, c1);
    c.label = std::stoi(line.substr(c1 + 1, c2 - c1 - 1));
    c.score = std::strtod(line.c_str() + c2 + 1, nullptr);
    cases.push_back(std::move(c));
  }
  return cases;
}

}  // namespace mmnas
