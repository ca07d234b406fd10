#include <gtest/gtest.h>

#include <random>

#include "fundus/clahe.hpp"
#include "fundus/error.hpp"
#include "support/oracles.hpp"

using namespace fundus;

namespace {

cv::Mat random_gray(int h, int w, std::mt19937& rng, int lo = 0, int hi = 255) {
  cv::Mat m(h, w, CV_8UC1);
  std::uniform_int_distribution<int> d(lo, hi);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(d(rng));
  return m;
}

void expect_equal(const cv::Mat& a, const cv::Mat& b) {
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(cv::countNonZero(a != b), 0);
}

}  // namespace

TEST(Clahe, HorizontalRampMatchesOracle) {
  cv::Mat ramp(16, 16, CV_8UC1);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) ramp.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(x * 16);
  expect_equal(clahe(ramp, {2, 2, 2.0}), oracle::clahe(ramp, 2, 2, 2.0));
}

TEST(Clahe, RandomImagesMatchOracle) {
  std::mt19937 rng(11);
  for (int i = 0; i < 6; ++i) {
    const cv::Mat img = random_gray(20 + i, 24 - i, rng, i * 10, 255 - i * 20);
    for (auto [tx, ty] : {std::pair{1, 1}, {2, 3}, {4, 4}, {5, 2}})
      for (double clip : {1.0, 2.0, 3.5, 40.0}) expect_equal(clahe(img, {tx, ty, clip}), oracle::clahe(img, tx, ty, clip));
  }
}

TEST(Clahe, LowContrastImagesMatchOracle) {
  std::mt19937 rng(3);
  for (int i = 0; i < 5; ++i) {
    const cv::Mat img = random_gray(32, 32, rng, 100, 104);
    expect_equal(clahe(img, {4, 4, 2.0}), oracle::clahe(img, 4, 4, 2.0));
  }
}

TEST(Clahe, ConstantImageGivesConstantOutput) {
  for (int v : {0, 37, 255}) {
    const cv::Mat img(30, 41, CV_8UC1, cv::Scalar(v));
    for (ClaheParams p : {ClaheParams{1, 1, 1.0}, {3, 5, 2.0}, {8, 8, 100.0}}) {
      const cv::Mat out = clahe(img, p);
      double lo, hi;
      cv::minMaxLoc(out, &lo, &hi);
      EXPECT_EQ(lo, hi);
    }
  }
}

TEST(Clahe, ClippedHistogramBound) {
  std::mt19937 rng(5);
  for (int i = 0; i < 10; ++i) {
    const cv::Mat tile = random_gray(16, 16, rng, 50, 60);
    for (double clip : {1.0, 2.0, 4.0}) {
      const auto h = oracle::clipped_histogram(tile, clip);
      double total = 0, excess = 0;
      std::array<int, 256> raw{};
      for (int y = 0; y < tile.rows; ++y)
        for (int x = 0; x < tile.cols; ++x) ++raw[tile.at<std::uint8_t>(y, x)];
      const double limit = clip * 256 / 256.0;
      for (int v : raw) excess += std::max(0.0, v - limit);
      for (double v : h) {
        total += v;
        EXPECT_LE(v, limit + excess / 256 + 1e-9);
      }
      EXPECT_NEAR(total, 256.0, 1e-9);
    }
  }
}

TEST(Clahe, GridLargerThanImageIsParameterError) {
  const cv::Mat img(10, 20, CV_8UC1, cv::Scalar(1));
  try {
    clahe(img, {4, 11, 2.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Parameter);
  }
  EXPECT_NO_THROW(clahe(img, {20, 10, 2.0}));
}

TEST(Clahe, TilePixelModeResolvesTileCount) {
  std::mt19937 rng(8);
  const cv::Mat img = random_gray(30, 30, rng);
  // 10-pixel tiles on a 30-pixel axis are a 3x3 grid
  expect_equal(clahe(img, {10, 10, 2.0}, GridMode::TilePixels), clahe(img, {3, 3, 2.0}, GridMode::TileCount));
  // tiles wider than the image collapse to a single tile
  expect_equal(clahe(img, {300, 300, 2.0}, GridMode::TilePixels), clahe(img, {1, 1, 2.0}));
}

TEST(Clahe, DefaultTables) {
  const auto seg = default_segmentation_clahe();
  ASSERT_EQ(seg.size(), 2u);
  EXPECT_EQ(seg[0].to_string(), "8x8:2");
  EXPECT_EQ(seg[1].to_string(), "300x300:2");
  const auto cls = default_classification_clahe();
  ASSERT_EQ(cls.size(), 6u);
  EXPECT_EQ(format_clahe_list(cls), "8x8:2;8x8:10;100x100:2;100x100:100;300x300:2;500x500:2");
  EXPECT_EQ(cls[3].tile_w, 100);
  EXPECT_EQ(cls[3].clip_limit, 100.0);
  EXPECT_EQ(format_clahe_list(parse_clahe_list(format_clahe_list(cls))), format_clahe_list(cls));
}

TEST(Clahe, TileBounds) {
  EXPECT_EQ(tile_bounds(10, 3), (std::vector<int>{0, 3, 6, 10}));
  EXPECT_EQ(tile_bounds(550, 500).back(), 550);
}
