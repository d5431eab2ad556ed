#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ldam {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Averaging { micro, macro };

struct Confusion {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;
};

/// Per-label counts for score matrices laid out {samples, labels}; positive iff score >= threshold.
std::vector<Confusion> confusion_counts(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& y,
                                        double threshold = 0.5);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

/// Zero predicted positives -> precision 0 (still averaged); labels without actual
/// positives are left out of the macro recall mean.
PrecisionRecall precision_recall(std::span<const Confusion> counts, Averaging averaging);

/// Mann-Whitney AUC with midranks. Throws if either class is absent.
double binary_auc(std::span<const double> scores, std::span<const double> labels);

/// Micro pools every (sample, label) pair; macro averages labels that have both classes.
double roc_auc(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& y, Averaging averaging);

struct LabelMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double auc = 0.0;  // NaN when the label lacks a class
  std::int64_t support = 0;
};

struct MetricsReport {
  double micro_precision = 0.0;
  double macro_precision = 0.0;
  double micro_recall = 0.0;
  double macro_recall = 0.0;
  double micro_auc = 0.0;
  double macro_auc = 0.0;
  std::vector<LabelMetrics> per_label;
};

MetricsReport compute_metrics(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& y, double threshold = 0.5);

/// `averaging,precision,recall,roc_auc` with one row for micro and one for macro.
std::string report_csv(const MetricsReport& report);
/// Fixed-width table: micro/macro precision, micro/macro recall, micro/macro ROC AUC.
std::string report_table(const MetricsReport& report, const std::string& model_name = "LDAM");

}  // namespace ldam
