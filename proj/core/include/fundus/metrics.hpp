#pragma once

#include <span>

#include <opencv2/core.hpp>

namespace fundus {

/// 2|A∩B| / (|A| + |B|) over non-zero pixels; 1 when both masks are empty.
double dice(const cv::Mat& pred, const cv::Mat& truth);

/// Area under the ROC curve via the rank statistic; tied scores across
/// classes count one half. Labels are 1 (positive) or 0.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct OperatingPoint {
  double sensitivity = 0;
  double specificity = 0;
  double threshold = 0;  // predict positive when score >= threshold
};

/// Among thresholds whose specificity is at least `target_specificity`,
/// the one with the highest sensitivity (ties go to the lower threshold).
/// Candidate thresholds are the observed scores plus +infinity.
OperatingPoint sensitivity_at_specificity(std::span<const double> scores, std::span<const int> labels,
                                          double target_specificity);

double cdr_mae(std::span<const double> predicted, std::span<const double> truth);

}  // namespace fundus
