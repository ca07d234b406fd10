#include "fundus/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "fundus/error.hpp"

namespace fundus {

double dice(const cv::Mat& pred, const cv::Mat& truth) {
  require(pred.size() == truth.size() && pred.type() == CV_8UC1 && truth.type() == CV_8UC1,
          ErrorCode::Argument, "dice needs two 8-bit masks of the same shape");
  std::size_t a = 0, b = 0, both = 0;
  for (int r = 0; r < pred.rows; ++r) {
    const auto* p = pred.ptr<std::uint8_t>(r);
    const auto* t = truth.ptr<std::uint8_t>(r);
    for (int c = 0; c < pred.cols; ++c) {
      const bool x = p[c] != 0;
      const bool y = t[c] != 0;
      a += x;
      b += y;
      both += x && y;
    }
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

namespace {

void check_scores(std::span<const double> scores, std::span<const int> labels, std::size_t& pos,
                  std::size_t& neg) {
  require(scores.size() == labels.size(), ErrorCode::Argument, "scores and labels differ in length");
  pos = neg = 0;
  for (int l : labels) {
    require(l == 0 || l == 1, ErrorCode::Argument, "labels must be 0 or 1");
    (l ? pos : neg) += 1;
  }
  require(pos > 0 && neg > 0, ErrorCode::UndefinedMetric, "both classes must be present");
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  std::size_t pos = 0, neg = 0;
  check_scores(scores, labels, pos, neg);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Mid-ranks (1-based) for tie groups.
  double positive_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1) positive_rank_sum += rank;
    i = j + 1;
  }
  const double p = static_cast<double>(pos);
  const double q = static_cast<double>(neg);
  return (positive_rank_sum - p * (p + 1) / 2.0) / (p * q);
}

OperatingPoint sensitivity_at_specificity(std::span<const double> scores, std::span<const int> labels,
                                          double target_specificity) {
  std::size_t pos = 0, neg = 0;
  check_scores(scores, labels, pos, neg);
  std::vector<double> candidates(scores.begin(), scores.end());
  candidates.push_back(std::numeric_limits<double>::infinity());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  OperatingPoint best{-1, 0, 0};
  for (double t : candidates) {
    std::size_t tp = 0, tn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool predicted = scores[i] >= t;
      if (labels[i] == 1 && predicted) ++tp;
      if (labels[i] == 0 && !predicted) ++tn;
    }
    const double sens = static_cast<double>(tp) / static_cast<double>(pos);
    const double spec = static_cast<double>(tn) / static_cast<double>(neg);
    if (spec < target_specificity) continue;
    // Ascending thresholds: a strictly better sensitivity is needed to move up.
    if (sens > best.sensitivity) best = {sens, spec, t};
  }
  return best;
}

double cdr_mae(std::span<const double> predicted, std::span<const double> truth) {
  require(predicted.size() == truth.size(), ErrorCode::Argument, "CDR lists differ in length");
  require(!predicted.empty(), ErrorCode::Argument, "CDR lists are empty");
  double acc = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) acc += std::abs(predicted[i] - truth[i]);
  return acc / static_cast<double>(predicted.size());
}

}  // namespace fundus
