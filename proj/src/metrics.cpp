#include "unibrain/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "unibrain/common.hpp"

namespace ub {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

double auc_percent(std::span<const double> scores, std::span<const int> labels, bool& defined) {
  if (scores.size() != labels.size())
    fail(ErrCode::validation, "auc: score/label count mismatch");
  long pos = 0, neg = 0;
  for (int y : labels) (y != 0 ? pos : neg)++;
  if (pos == 0 || neg == 0) {
    defined = false;
    return kNaN;
  }
  defined = true;
  // average ranks; tied pairs then contribute exactly one half each
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size(), 0.0);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg = (double(i + 1) + double(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double rank_sum = 0.0;
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (labels[k] != 0) rank_sum += rank[k];
  double u = rank_sum - double(pos) * double(pos + 1) / 2.0;
  return 100.0 * u / (double(pos) * double(neg));
}

double ap_percent(std::span<const double> scores, std::span<const int> labels, bool& defined) {
  if (scores.size() != labels.size())
    fail(ErrCode::validation, "ap: score/label count mismatch");
  long pos = 0;
  for (int y : labels)
    if (y != 0) ++pos;
  if (pos == 0) {
    defined = false;
    return kNaN;
  }
  defined = true;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  long seen_pos = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]] != 0) {
      ++seen_pos;
      sum += double(seen_pos) / double(r + 1);
    }
  }
  return 100.0 * sum / double(pos);
}

EvalReport evaluate_predictions(const std::vector<std::vector<double>>& probs,
                                const std::vector<std::vector<int>>& labels) {
  if (probs.size() != labels.size() || probs.empty())
    fail(ErrCode::validation, "evaluate_predictions: bad case counts");
  std::size_t C = probs[0].size();
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (probs[i].size() != C || labels[i].size() != C)
      fail(ErrCode::validation, "evaluate_predictions: ragged inputs");

  EvalReport rep;
  rep.cases = long(probs.size());
  double auc_sum = 0, acc_sum = 0, f1_sum = 0, ap_sum = 0;
  int auc_n = 0, f1_n = 0, ap_n = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<double> s(probs.size());
    std::vector<int> y(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
      s[i] = probs[i][c];
      y[i] = labels[i][c];
    }
    ClassMetrics m;
    m.auc = auc_percent(s, y, m.auc_defined);
    m.ap = ap_percent(s, y, m.ap_defined);
    for (std::size_t i = 0; i < s.size(); ++i) {
      bool p = s[i] > 0.5;
      bool g = y[i] != 0;
      if (p && g) ++m.tp;
      else if (p && !g) ++m.fp;
      else if (!p && g) ++m.fn;
      else ++m.tn;
    }
    m.acc = 100.0 * double(m.tp + m.tn) / double(s.size());
    long denom = 2 * m.tp + m.fp + m.fn;
    m.f1_defined = denom != 0;
    m.f1 = m.f1_defined ? 100.0 * 2.0 * double(m.tp) / double(denom) : kNaN;

    if (m.auc_defined) { auc_sum += m.auc; ++auc_n; } else ++rep.auc_excluded;
    if (m.ap_defined) { ap_sum += m.ap; ++ap_n; } else ++rep.ap_excluded;
    if (m.f1_defined) { f1_sum += m.f1; ++f1_n; } else ++rep.f1_excluded;
    acc_sum += m.acc;
    rep.per_class.push_back(m);
  }
  rep.a_auc = auc_n ? auc_sum / auc_n : kNaN;
  rep.a_acc = acc_sum / double(C);
  rep.a_f1 = f1_n ? f1_sum / f1_n : kNaN;
  rep.m_ap = ap_n ? ap_sum / ap_n : kNaN;
  return rep;
}

nlohmann::json eval_report_json(const EvalReport& rep, const std::vector<std::string>& classes) {
  if (classes.size() != rep.per_class.size())
    fail(ErrCode::validation, "eval_report_json: class name count mismatch");
  nlohmann::json j;
  j["cases"] = rep.cases;
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const ClassMetrics& m = rep.per_class[c];
    nlohmann::json e;
    e["auc"] = m.auc_defined ? nlohmann::json(m.auc) : nlohmann::json();
    e["acc"] = m.acc;
    e["f1"] = m.f1_defined ? nlohmann::json(m.f1) : nlohmann::json();
    e["ap"] = m.ap_defined ? nlohmann::json(m.ap) : nlohmann::json();
    e["tp"] = m.tp;
    e["fp"] = m.fp;
    e["tn"] = m.tn;
    e["fn"] = m.fn;
    per[classes[c]] = std::move(e);
  }
  j["per_class"] = std::move(per);
  nlohmann::json summary;
  summary["a_auc"] = std::isnan(rep.a_auc) ? nlohmann::json() : nlohmann::json(rep.a_auc);
  summary["a_acc"] = rep.a_acc;
  summary["a_f1"] = std::isnan(rep.a_f1) ? nlohmann::json() : nlohmann::json(rep.a_f1);
  summary["m_ap"] = std::isnan(rep.m_ap) ? nlohmann::json() : nlohmann::json(rep.m_ap);
  summary["auc_excluded"] = rep.auc_excluded;
  summary["ap_excluded"] = rep.ap_excluded;
  summary["f1_excluded"] = rep.f1_excluded;
  j["summary"] = std::move(summary);
  return j;
}

std::string eval_report_table(const EvalReport& rep, const std::vector<std::string>& classes) {
  if (classes.size() != rep.per_class.size())
    fail(ErrCode::validation, "eval_report_table: class name count mismatch");
  auto cell = [](double v, bool defined) {
    char buf[32];
    if (!defined) return std::string("     -");
    std::snprintf(buf, sizeof(buf), "%6.2f", v);
    return std::string(buf);
  };
  // columns: one per class, then the four summary averages
  std::size_t name_w = 6;
  for (const auto& c : classes) name_w = std::max(name_w, c.size());
  std::string out;
  auto pad = [&](const std::string& s, std::size_t w) {
    std::string r = s;
    while (r.size() < w) r.push_back(' ');
    return r;
  };
  out += pad("metric", 8);
  for (const auto& c : classes) out += "  " + pad(c, std::max<std::size_t>(6, c.size()));
  out += "    a_auc   a_acc    a_f1    m_ap\n";
  const char* row_names[4] = {"AUC", "ACC", "F1", "AP"};
  for (int row = 0; row < 4; ++row) {
    out += pad(row_names[row], 8);
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const ClassMetrics& m = rep.per_class[c];
      double v = row == 0 ? m.auc : row == 1 ? m.acc : row == 2 ? m.f1 : m.ap;
      bool defined = row == 0 ? m.auc_defined : row == 1 ? true : row == 2 ? m.f1_defined : m.ap_defined;
      out += "  " + pad(cell(v, defined), std::max<std::size_t>(6, classes[c].size()));
    }
    std::string sums[4] = {cell(rep.a_auc, !std::isnan(rep.a_auc)), cell(rep.a_acc, true),
                           cell(rep.a_f1, !std::isnan(rep.a_f1)), cell(rep.m_ap, !std::isnan(rep.m_ap))};
    for (int s = 0; s < 4; ++s) out += (s == 0 ? "  " : "  ") + (row == s ? sums[s] : std::string("     -"));
    out += '\n';
  }
  char tail[128];
  std::snprintf(tail, sizeof(tail), "cases=%ld auc_excluded=%d ap_excluded=%d f1_excluded=%d\n",
                rep.cases, rep.auc_excluded, rep.ap_excluded, rep.f1_excluded);
  out += tail;
  return out;
}

}  // namespace ub
