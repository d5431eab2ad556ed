#pragma once

// Brute-force AUC references. Deliberately quadratic and free of any ranking logic.

#include <algorithm>
#include <functional>
#include <vector>

namespace ldam::testing::oracle {

// P x N pair count: 1 for a correctly ordered pair, 1/2 for a tie.
inline double pair_auc(const std::vector<double>& s, const std::vector<double>& y) {
  double good = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1.0) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0.0) continue;
      pairs += 1.0;
      good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return good / pairs;
}

// Area under the ROC polyline built by sweeping every distinct threshold.
inline double trapezoid_auc(const std::vector<double>& s, const std::vector<double>& y) {
  std::vector<double> cuts(s);
  std::sort(cuts.begin(), cuts.end(), std::greater<>());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  double pos = 0, neg = 0;
  for (double v : y) (v == 1.0 ? pos : neg) += 1.0;
  double area = 0.0, prev_tpr = 0.0, prev_fpr = 0.0;
  for (double c : cuts) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= c) (y[i] == 1.0 ? tp : fp) += 1.0;
    const double tpr = tp / pos, fpr = fp / neg;
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    prev_tpr = tpr;
    prev_fpr = fpr;
  }
  return area;
}

}  // namespace ldam::testing::oracle
