#include "ldam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

namespace ldam {

namespace {

void require_same_shape(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& y) {
  if (scores.rows() != y.rows() || scores.cols() != y.cols()) {
    throw MetricsError("score matrix " + std::to_string(scores.rows()) + "x" + std::to_string(scores.cols()) +
                       " does not match labels " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()));
  }
  if (!((y.array() == 0.0) || (y.array() == 1.0)).all()) throw MetricsError("labels must be 0 or 1");
}

double ratio_or_zero(double num, double den) { return den > 0 ? num / den : 0.0; }

}  // namespace

std::vector<Confusion> confusion_counts(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& y, double threshold) {
  require_same_shape(scores, y);
  if (!(threshold > 0.0 && threshold < 1.0)) throw MetricsError("threshold must lie in (0, 1)");
  std::vector<Confusion> counts(static_cast<std::size_t>(scores.cols()));
  for (Eigen::Index j = 0; j < scores.cols(); ++j) {
    auto& c = counts[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      const bool predicted = scores(i, j) >= threshold;
      const bool actual = y(i, j) == 1.0;
      if (predicted && actual) ++c.tp;
      else if (predicted) ++c.fp;
      else if (actual) ++c.fn;
      else ++c.tn;
    }
  }
  return counts;
}

PrecisionRecall precision_recall(std::span<const Confusion> counts, Averaging averaging) {
  PrecisionRecall out;
  if (counts.empty()) return out;
  if (averaging == Averaging::micro) {
    double tp = 0, fp = 0, fn = 0;
    for (const auto& c : counts) {
      tp += static_cast<double>(c.tp);
      fp += static_cast<double>(c.fp);
      fn += static_cast<double>(c.fn);
    }
    out.precision = ratio_or_zero(tp, tp + fp);
    out.recall = ratio_or_zero(tp, tp + fn);
    return out;
  }
  double precision_sum = 0.0;
  double recall_sum = 0.0;
  std::size_t recall_labels = 0;
  for (const auto& c : counts) {
    precision_sum += ratio_or_zero(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
    if (c.tp + c.fn > 0) {
      recall_sum += static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
      ++recall_labels;
    }
  }
  out.precision = precision_sum / static_cast<double>(counts.size());
  out.recall = recall_labels ? recall_sum / static_cast<double>(recall_labels) : 0.0;
  return out;
}

double binary_auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw MetricsError("binary_auc: score/label length mismatch");
  for (double v : labels) {
    if (v != 0.0 && v != 1.0) throw MetricsError("binary_auc: labels must be 0 or 1");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks (1-based) of the positives.
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1.0) {
        positive_rank_sum += midrank;
        ++positives;
      }
    }
    i = j + 1;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) {
    throw MetricsError("ROC AUC is undefined when only one class is present");
  }
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

double roc_auc(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& y, Averaging averaging) {
  require_same_shape(scores, y);
  if (averaging == Averaging::micro) {
    std::vector<double> s, l;
    s.reserve(static_cast<std::size_t>(scores.size()));
    l.reserve(static_cast<std::size_t>(scores.size()));
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      for (Eigen::Index j = 0; j < scores.cols(); ++j) {
        s.push_back(scores(i, j));
        l.push_back(y(i, j));
      }
    }
    return binary_auc(s, l);
  }
  double total = 0.0;
  std::size_t included = 0;
  for (Eigen::Index j = 0; j < scores.cols(); ++j) {
    const double positives = y.col(j).sum();
    if (positives == 0.0 || positives == static_cast<double>(y.rows())) continue;
    std::vector<double> s(scores.col(j).data(), scores.col(j).data() + scores.rows());
    std::vector<double> l(y.col(j).data(), y.col(j).data() + y.rows());
    total += binary_auc(s, l);
    ++included;
  }
  if (included == 0) throw MetricsError("macro ROC AUC is undefined: no label has both classes");
  return total / static_cast<double>(included);
}

MetricsReport compute_metrics(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& y, double threshold) {
  if (scores.rows() == 0) throw MetricsError("cannot evaluate an empty dataset");
  const auto counts = confusion_counts(scores, y, threshold);
  MetricsReport r;
  const auto micro = precision_recall(counts, Averaging::micro);
  const auto macro = precision_recall(counts, Averaging::macro);
  r.micro_precision = micro.precision;
  r.micro_recall = micro.recall;
  r.macro_precision = macro.precision;
  r.macro_recall = macro.recall;
  r.micro_auc = roc_auc(scores, y, Averaging::micro);
  r.macro_auc = roc_auc(scores, y, Averaging::macro);
  for (std::size_t j = 0; j < counts.size(); ++j) {
    const auto& c = counts[j];
    LabelMetrics m;
    m.precision = ratio_or_zero(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
    m.recall = ratio_or_zero(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
    m.support = c.tp + c.fn;
    const auto col = static_cast<Eigen::Index>(j);
    const double positives = y.col(col).sum();
    if (positives == 0.0 || positives == static_cast<double>(y.rows())) {
      m.auc = std::numeric_limits<double>::quiet_NaN();
    } else {
      std::vector<double> s(scores.col(col).data(), scores.col(col).data() + scores.rows());
      std::vector<double> l(y.col(col).data(), y.col(col).data() + y.rows());
      m.auc = binary_auc(s, l);
    }
    r.per_label.push_back(m);
  }
  return r;
}

std::string report_csv(const MetricsReport& r) {
  char buf[256];
  std::string out = "averaging,precision,recall,roc_auc\n";
  std::snprintf(buf, sizeof buf, "micro,%.17g,%.17g,%.17g\n", r.micro_precision, r.micro_recall, r.micro_auc);
  out += buf;
  std::snprintf(buf, sizeof buf, "macro,%.17g,%.17g,%.17g\n", r.macro_precision, r.macro_recall, r.macro_auc);
  out += buf;
  return out;
}

std::string report_table(const MetricsReport& r, const std::string& model_name) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-8s | %-15s | %-15s | %-12s | %-12s | %-13s | %-13s\n", "Model", "Micro Precision",
                "Macro Precision", "Micro Recall", "Macro Recall", "Micro ROC AUC", "Macro ROC AUC");
  os << buf;
  os << std::string(std::char_traits<char>::length(buf) - 1, '-') << '\n';
  std::snprintf(buf, sizeof buf, "%-8s | %-15.4f | %-15.4f | %-12.4f | %-12.4f | %-13.4f | %-13.4f\n",
                model_name.c_str(), r.micro_precision, r.macro_precision, r.micro_recall, r.macro_recall,
                r.micro_auc, r.macro_auc);
  os << buf;
  return os.str();
}

}  // namespace ldam
