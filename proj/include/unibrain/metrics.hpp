#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace ub {

// Per-class evaluation.  Undefined values (AUC on a single-class column, AP
// with no positives, F1 with an empty 2TP+FP+FN denominator) are NaN and are
// excluded from the summary averages; the report counts the exclusions.
struct ClassMetrics {
  double auc = 0.0, acc = 0.0, f1 = 0.0, ap = 0.0;  // percentages
  bool auc_defined = false, ap_defined = false, f1_defined = false;
  long tp = 0, fp = 0, tn = 0, fn = 0;  // at the 0.5 threshold
};

struct EvalReport {
  std::vector<ClassMetrics> per_class;
  double a_auc = 0.0, a_acc = 0.0, a_f1 = 0.0, m_ap = 0.0;
  int auc_excluded = 0, ap_excluded = 0, f1_excluded = 0;
  long cases = 0;
};

// Mann-Whitney AUC as a percentage; tied score pairs count one half.
// defined=false (NaN result) when either class is empty.
double auc_percent(std::span<const double> scores, std::span<const int> labels, bool& defined);

// Mean precision at each positive's rank after a stable descending sort
// (ties keep original order).  defined=false when there are no positives.
double ap_percent(std::span<const double> scores, std::span<const int> labels, bool& defined);

EvalReport evaluate_predictions(const std::vector<std::vector<double>>& probs,
                                const std::vector<std::vector<int>>& labels);

nlohmann::json eval_report_json(const EvalReport& rep, const std::vector<std::string>& classes);
std::string eval_report_table(const EvalReport& rep, const std::vector<std::string>& classes);

}  // namespace ub
