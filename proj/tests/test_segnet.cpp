#include <gtest/gtest.h>

#include <cmath>

#include "fundus/dataio.hpp"
#include "fundus/error.hpp"
#include "fundus/segnet.hpp"
#include "support/oracles.hpp"

using namespace fundus;

namespace {

SegOutput constant_output(int h, int w, float bg, float disc, float cup) {
  SegOutput o;
  o.probs = nn::Tensor({1, 3, h, w});
  for (int i = 0; i < h * w; ++i) {
    o.probs.channel(0, 0)[i] = bg;
    o.probs.channel(0, 1)[i] = disc;
    o.probs.channel(0, 2)[i] = cup;
  }
  return o;
}

FundusImage ramp_image(int n) {
  cv::Mat m(n, n, CV_8UC3);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) m.at<cv::Vec3b>(y, x) = cv::Vec3b(x * 3 % 256, y * 5 % 256, (x + y) % 256);
  return FundusImage(m, "ramp");
}

}  // namespace

TEST(SegNetBuild, FullPresetHasFiftySevenWeightLayers) {
  for (int c : {5, 11}) {
    auto net = build_segnet(SegNetConfig::from_preset(SegPreset::Paper57, c, 1));
    EXPECT_EQ(net->weight_layers(), 57);
  }
}

TEST(SegNetBuild, TinyShapeContract) {
  for (int c : {5, 11}) {
    auto net = build_segnet(SegNetConfig::from_preset(SegPreset::Tiny, c, 1));
    const nn::Tensor y = net->forward(nn::Tensor({1, c, 128, 128}, 0.3f));
    EXPECT_EQ(y.shape(), (nn::Shape{1, 3, 128, 128}));
  }
}

TEST(SegNetBuild, RejectsBadInputs) {
  auto cfg = SegNetConfig::from_preset(SegPreset::Tiny, 5, 1);
  cfg.in_channels = 7;
  EXPECT_THROW(cfg.validate(), Error);
  auto net = build_segnet(SegNetConfig::from_preset(SegPreset::Tiny, 5, 1));
  EXPECT_THROW(net->forward(nn::Tensor({1, 11, 32, 32})), Error);
  EXPECT_THROW(net->forward(nn::Tensor({1, 5, 36, 36})), Error);  // not divisible by 16
}

TEST(SegNetBuild, SameSeedSameWeights) {
  auto a = build_segnet(SegNetConfig::from_preset(SegPreset::Tiny, 5, 7));
  auto b = build_segnet(SegNetConfig::from_preset(SegPreset::Tiny, 5, 7));
  const nn::Tensor x({1, 5, 32, 32}, 0.5f);
  const nn::Tensor ya = a->forward(x), yb = b->forward(x);
  for (std::size_t i = 0; i < ya.numel(); ++i) ASSERT_EQ(ya.data()[i], yb.data()[i]);
}

TEST(SegNetPredict, ProbabilitiesNormalized) {
  auto net = build_segnet(SegNetConfig::from_preset(SegPreset::Tiny, 11, 2));
  const ChannelStack s = build_seg_stack(ramp_image(64), SegVariant::CoordsClahe, default_segmentation_clahe(),
                                         GridMode::TilePixels);
  const SegOutput out = net->predict(s);
  EXPECT_LT(out.normalization_error(), 1e-5);
  for (float v : out.probs.span()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(SegNetIo, SaveLoadPreservesPrediction) {
  oracle::TempDir dir("seg");
  auto net = build_segnet(SegNetConfig::from_preset(SegPreset::Tiny, 5, 3));
  save_segnet(dir.path() / "m.fsw", *net);
  auto back = load_segnet(dir.path() / "m.fsw");
  EXPECT_EQ(back->config().in_channels, 5);
  const ChannelStack s = build_seg_stack(ramp_image(64), SegVariant::CoordsOnly);
  const SegOutput a = net->predict(s), b = back->predict(s);
  for (std::size_t i = 0; i < a.probs.numel(); ++i) ASSERT_EQ(a.probs.data()[i], b.probs.data()[i]);
}

TEST(MedianFreqWeights, StatedExamples) {
  const auto w = median_freq_weights({0.90, 0.08, 0.02});
  EXPECT_NEAR(w[0], 0.08 / 0.90, 1e-12);
  EXPECT_DOUBLE_EQ(w[1], 1.0);
  EXPECT_DOUBLE_EQ(w[2], 4.0);
  const auto u = median_freq_weights({1.0 / 3, 1.0 / 3, 1.0 / 3});
  for (double v : u) EXPECT_DOUBLE_EQ(v, 1.0);
  try {
    median_freq_weights({0.9, 0.1, 0.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DivideByZero);
    EXPECT_NE(std::string(e.what()).find("cup"), std::string::npos);
  }
}

TEST(MedianFreqWeights, MedianClassGetsOne) {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> d(0.01, 1.0);
  for (int i = 0; i < 50; ++i) {
    std::array<double, 3> f = {d(rng), d(rng), d(rng)};
    const double s = f[0] + f[1] + f[2];
    for (auto& v : f) v /= s;
    const auto w = median_freq_weights(f);
    int ones = 0;
    for (double v : w) ones += v == 1.0;
    EXPECT_GE(ones, 1);
  }
}

TEST(MedianFreqWeights, MatchesPixelTallyOnFixture) {
  oracle::TempDir dir("seg");
  const auto m = generate_synthetic_fixture(6, 3, 128, dir.path());
  std::vector<LabelMask> masks;
  std::vector<cv::Mat> raw;
  for (const auto& e : m.entries()) {
    masks.push_back(load_mask(m.mask_path(e)));
    raw.push_back(masks.back().labels());
  }
  const auto w = median_freq_weights(pixel_class_frequencies(masks));
  const auto o = oracle::median_freq_weights(raw);
  for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(w[k], o[k]);
}

TEST(SegLoss, OneHotIsZeroUniformIsLog3) {
  LabelMask target(2, 2);
  target.labels().at<std::uint8_t>(0, 1) = 1;
  target.labels().at<std::uint8_t>(1, 1) = 2;
  SegOutput one_hot = constant_output(2, 2, 0, 0, 0);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) one_hot.probs.at(0, static_cast<int>(target.at(y, x)), y, x) = 1.0f;
  const std::array<double, 3> unit = {1, 1, 1};
  EXPECT_DOUBLE_EQ(weighted_cross_entropy(one_hot, target, unit), 0.0);
  const SegOutput uniform = constant_output(2, 2, 1.0f / 3, 1.0f / 3, 1.0f / 3);
  EXPECT_NEAR(weighted_cross_entropy(uniform, target, unit), std::log(3.0), 1e-6);
}

TEST(SegLoss, HandSummedTwoByTwo) {
  LabelMask target(2, 2);
  target.labels().at<std::uint8_t>(0, 0) = 0;
  target.labels().at<std::uint8_t>(0, 1) = 1;
  target.labels().at<std::uint8_t>(1, 0) = 2;
  target.labels().at<std::uint8_t>(1, 1) = 1;
  SegOutput p = constant_output(2, 2, 0.2f, 0.5f, 0.3f);
  p.probs.at(0, 0, 0, 0) = 0.7f;
  p.probs.at(0, 1, 0, 0) = 0.1f;
  p.probs.at(0, 2, 0, 0) = 0.2f;
  const std::array<double, 3> w = {0.5, 2.0, 4.0};
  const double expect =
      (0.5 * -std::log(0.7) + 2.0 * -std::log(0.5) + 4.0 * -std::log(0.3) + 2.0 * -std::log(0.5)) / 4.0;
  EXPECT_NEAR(weighted_cross_entropy(p, target, w), expect, 1e-6);
}

TEST(Ensemble, MeanArithmetic) {
  const SegOutput a = constant_output(4, 4, 0.5f, 0.3f, 0.2f);
  const SegOutput b = constant_output(4, 4, 0.3f, 0.3f, 0.4f);
  const SegOutput ab[] = {a, b};
  const SegOutput ba[] = {b, a};
  const SegOutput m = average_outputs(ab);
  EXPECT_FLOAT_EQ(m.prob(Label::Cup, 1, 1), 0.3f);
  const SegOutput aa[] = {a, a};
  EXPECT_FLOAT_EQ(average_outputs(aa).prob(Label::Disc, 2, 3), 0.3f);
  const SegOutput m2 = average_outputs(ba);
  for (std::size_t i = 0; i < m.probs.numel(); ++i) EXPECT_EQ(m.probs.data()[i], m2.probs.data()[i]);
  EXPECT_LT(m.normalization_error(), 1e-6);
}

TEST(Ensemble, MatchesOfflineMeanOfMembers) {
  auto five = build_segnet(SegNetConfig::from_preset(SegPreset::Tiny, 5, 5));
  auto eleven = build_segnet(SegNetConfig::from_preset(SegPreset::Tiny, 11, 6));
  const FundusImage img = ramp_image(64);
  SegNet* members[] = {five.get(), eleven.get()};
  const SegOutput ens = ensemble_segment(members, img, default_segmentation_clahe(), GridMode::TilePixels);
  const SegOutput p5 = five->predict(build_seg_stack(img, SegVariant::CoordsOnly));
  const SegOutput p11 = eleven->predict(
      build_seg_stack(img, SegVariant::CoordsClahe, default_segmentation_clahe(), GridMode::TilePixels));
  for (std::size_t i = 0; i < ens.probs.numel(); ++i)
    ASSERT_NEAR(ens.probs.data()[i], (p5.probs.data()[i] + p11.probs.data()[i]) / 2, 1e-7);
  EXPECT_LT(ens.normalization_error(), 1e-5);
}

TEST(SegTraining, SameSeedSameFirstEpochAndPlateauLr) {
  oracle::TempDir dir("seg");
  const auto m = generate_synthetic_fixture(4, 2, 128, dir.path());
  std::vector<SegSample> samples;
  for (const auto& e : m.entries()) {
    const FundusImage f = square_crop_resize(load_image(m.image_path(e)), 64);
    samples.push_back({e.id, build_seg_stack(f, SegVariant::CoordsOnly), square_crop_resize(load_mask(m.mask_path(e)), 64)});
  }
  SegTrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 5;
  cfg.augment_params.seed = 5;
  const std::span<const SegSample> train(samples.data(), 3), val(samples.data() + 3, 1);
  auto a = build_segnet(SegNetConfig::from_preset(SegPreset::Tiny, 5, 1));
  auto b = build_segnet(SegNetConfig::from_preset(SegPreset::Tiny, 5, 1));
  const auto ra = train_segnet(*a, train, val, cfg);
  const auto rb = train_segnet(*b, train, val, cfg);
  ASSERT_EQ(ra.log.size(), 2u);
  EXPECT_EQ(ra.log[0].train_loss, rb.log[0].train_loss);
  EXPECT_EQ(ra.log[0].val_loss, rb.log[0].val_loss);
  EXPECT_DOUBLE_EQ(ra.log[0].lr, 1e-4);

  cfg.epochs = 1;
  int calls = 0;
  train_segnet(*a, train, val, cfg, [&](const SegEpochLog& e, SegNet&) {
    ++calls;
    EXPECT_TRUE(std::isfinite(e.val_dice_disc));
    return false;
  });
  EXPECT_EQ(calls, 1);
}

TEST(SegOutputIo, RoundTrip) {
  oracle::TempDir dir("seg");
  const SegOutput a = constant_output(8, 8, 0.25f, 0.5f, 0.25f);
  save_seg_output(dir.path() / "p.fsw", a, "x");
  const SegOutput b = load_seg_output(dir.path() / "p.fsw");
  for (std::size_t i = 0; i < a.probs.numel(); ++i) EXPECT_EQ(a.probs.data()[i], b.probs.data()[i]);
}
