#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "fundus/error.hpp"
#include "fundus/evaluate.hpp"
#include "fundus/metrics.hpp"
#include "support/oracles.hpp"

using namespace fundus;

namespace {

struct Fixture {
  std::vector<double> scores;
  std::vector<int> labels;
};

Fixture random_fixture(std::mt19937& rng, int n, bool coarse) {
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> q(0, 4);
  Fixture f;
  for (int i = 0; i < n; ++i) {
    f.labels.push_back(i < 2 ? i : (u(rng) < 0.4));
    f.scores.push_back(coarse ? q(rng) / 4.0 : u(rng));
  }
  return f;
}

cv::Mat rect_mask(int x, int y, int w, int h) {
  cv::Mat m(10, 10, CV_8UC1, cv::Scalar(0));
  m(cv::Rect(x, y, w, h)).setTo(1);
  return m;
}

}  // namespace

TEST(Dice, StatedCases) {
  const cv::Mat a = rect_mask(0, 0, 2, 2);
  EXPECT_DOUBLE_EQ(dice(a, a), 1.0);
  EXPECT_DOUBLE_EQ(dice(a, rect_mask(5, 5, 2, 2)), 0.0);
  EXPECT_DOUBLE_EQ(dice(a, rect_mask(1, 0, 2, 2)), 0.5);
  const cv::Mat empty(10, 10, CV_8UC1, cv::Scalar(0));
  EXPECT_DOUBLE_EQ(dice(empty, empty), 1.0);
  EXPECT_THROW(dice(a, cv::Mat(5, 5, CV_8UC1, cv::Scalar(0))), Error);
}

TEST(Dice, SymmetricAndBounded) {
  std::mt19937 rng(1);
  for (int i = 0; i < 30; ++i) {
    cv::Mat a(12, 12, CV_8UC1), b(12, 12, CV_8UC1);
    cv::randu(a, 0, 2);
    cv::randu(b, 0, 2);
    const double d = dice(a, b);
    EXPECT_DOUBLE_EQ(d, dice(b, a));
    EXPECT_GE(d, 0);
    EXPECT_LE(d, 1);
  }
}

TEST(RocAuc, StatedCases) {
  const std::vector<double> s = {0.9, 0.8, 0.4, 0.3};
  const std::vector<int> l = {1, 0, 1, 0};
  EXPECT_DOUBLE_EQ(roc_auc(s, l), 0.75);
  const std::vector<double> tied = {0.5, 0.5, 0.5, 0.5};
  EXPECT_DOUBLE_EQ(roc_auc(tied, l), 0.5);
  const std::vector<int> one = {1, 1, 1, 1};
  try {
    roc_auc(s, one);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UndefinedMetric);
  }
}

TEST(RocAuc, MatchesPairwiseCount) {
  std::mt19937 rng(2);
  for (int i = 0; i < 100; ++i) {
    const Fixture f = random_fixture(rng, 20, i % 2 == 0);
    EXPECT_NEAR(roc_auc(f.scores, f.labels), oracle::pairwise_auc(f.scores, f.labels), 1e-12);
  }
}

TEST(RocAuc, MonotoneTransformAndComplement) {
  std::mt19937 rng(3);
  for (int i = 0; i < 30; ++i) {
    Fixture f = random_fixture(rng, 25, i % 3 == 0);
    const double a = roc_auc(f.scores, f.labels);
    std::vector<double> t, neg;
    for (double s : f.scores) {
      t.push_back(std::exp(3 * s) + 7);
      neg.push_back(-s);
    }
    EXPECT_NEAR(roc_auc(t, f.labels), a, 1e-12);
    EXPECT_NEAR(roc_auc(neg, f.labels), 1 - a, 1e-12);
  }
}

TEST(SensAtSpec, MatchesSweep) {
  std::mt19937 rng(4);
  for (int i = 0; i < 100; ++i) {
    const Fixture f = random_fixture(rng, 20, i % 2 == 0);
    for (double target : {0.0, 0.5, 0.85, 1.0}) {
      const OperatingPoint p = sensitivity_at_specificity(f.scores, f.labels, target);
      const oracle::SweepPoint o = oracle::sweep_sens_at_spec(f.scores, f.labels, target);
      EXPECT_NEAR(p.sensitivity, o.sensitivity, 1e-12);
      EXPECT_NEAR(p.specificity, o.specificity, 1e-12);
      EXPECT_EQ(p.threshold, o.threshold);
      EXPECT_GE(p.specificity, target);
    }
  }
}

TEST(SensAtSpec, ZeroTargetFindsFullSensitivity) {
  const std::vector<double> s = {0.1, 0.7, 0.3, 0.9};
  const std::vector<int> l = {0, 1, 1, 0};
  const OperatingPoint p = sensitivity_at_specificity(s, l, 0.0);
  EXPECT_DOUBLE_EQ(p.sensitivity, 1.0);
  const OperatingPoint strict = sensitivity_at_specificity(s, l, 1.0);
  EXPECT_DOUBLE_EQ(strict.specificity, 1.0);
}

TEST(CdrMae, StatedAndRandom) {
  const std::vector<double> p = {0.5}, t = {0.4};
  EXPECT_NEAR(cdr_mae(p, t), 0.1, 1e-12);
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> a(10), b(10);
    double sum = 0;
    for (int k = 0; k < 10; ++k) {
      a[k] = u(rng);
      b[k] = u(rng);
      sum += std::abs(a[k] - b[k]);
    }
    EXPECT_NEAR(cdr_mae(a, b), sum / 10, 1e-12);
  }
  const std::vector<double> shorter = {0.1, 0.2};
  EXPECT_THROW(cdr_mae(p, shorter), Error);
}

TEST(Summarize, AggregatesAndSerializes) {
  std::vector<PerImageMetrics> rows;
  for (int i = 0; i < 6; ++i) {
    PerImageMetrics r;
    r.id = "img" + std::to_string(i);
    r.label = i % 2 ? Diagnosis::Glaucoma : Diagnosis::Healthy;
    r.dice_disc = 0.9;
    r.dice_cup = 0.8;
    r.cdr_true = 0.4;
    r.cdr_pred = 0.5;
    r.risk = i % 2 ? 0.9 - 0.01 * i : 0.1 + 0.01 * i;
    rows.push_back(r);
  }
  rows[5].status = "no-detection";
  rows[5].cdr_pred.reset();
  MetricsReport m = summarize(rows, 0.85);
  EXPECT_NEAR(m.dice_disc, 0.9, 1e-12);
  EXPECT_NEAR(m.cdr_mae, 0.1, 1e-12);
  ASSERT_TRUE(m.auc);
  EXPECT_DOUBLE_EQ(*m.auc, 1.0);
  EXPECT_EQ(m.failures, 1);
  EXPECT_TRUE(m.in_range());

  const auto j = nlohmann::json::parse(to_json(m));
  EXPECT_DOUBLE_EQ(j.at("auc").get<double>(), 1.0);
  EXPECT_FALSE(format_table(m).empty());

  for (auto& r : rows) r.risk.reset();
  const MetricsReport no_risk = summarize(rows, 0.85);
  EXPECT_FALSE(no_risk.auc);
  EXPECT_FALSE(no_risk.in_range());
}
