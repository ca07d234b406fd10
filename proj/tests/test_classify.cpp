#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <opencv2/imgcodecs.hpp>

#include "fundus/classify.hpp"
#include "fundus/error.hpp"
#include "fundus/nn/checkpoint.hpp"
#include "fundus/nn/loss.hpp"
#include "support/oracles.hpp"

using namespace fundus;

namespace {

ChannelStack random_stack(int c, int h, int w, int seed) {
  nn::Tensor t({1, c, h, w});
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> d(0, 1);
  for (auto& v : t.span()) v = d(rng);
  std::vector<ChannelDescriptor> m(c);
  return ChannelStack(std::move(t), m);
}

std::unique_ptr<Classifier> tiny(std::uint64_t seed = 1) {
  return build_classifier({BackboneFamily::Tiny, WeightsSource::RandomInit, {}, seed});
}

}  // namespace

TEST(ExtractPatch, CenteredWindow) {
  const FundusImage img(cv::Mat(1634, 1634, CV_8UC3, cv::Scalar::all(3)), "big");
  const Patch p = extract_patch(img, cv::Point2d(800, 800), 550);
  EXPECT_EQ(p.window, cv::Rect(525, 525, 550, 550));
  EXPECT_EQ(p.image.width(), 550);
  EXPECT_FALSE(p.resized);
}

TEST(ExtractPatch, ShiftedAtBorder) {
  const FundusImage img(cv::Mat(1000, 1200, CV_8UC3, cv::Scalar::all(3)), "big");
  EXPECT_EQ(extract_patch(img, cv::Point2d(100, 100), 550).window, cv::Rect(0, 0, 550, 550));
  EXPECT_EQ(extract_patch(img, cv::Point2d(1190, 990), 550).window, cv::Rect(650, 450, 550, 550));
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> x(0, 1199), y(0, 999);
  for (int i = 0; i < 20; ++i) {
    const Patch p = extract_patch(img, cv::Point2d(x(rng), y(rng)), 550);
    EXPECT_EQ(p.image.width(), 550);
    EXPECT_EQ(p.image.height(), 550);
  }
}

TEST(ExtractPatch, SmallImageResizedUp) {
  const FundusImage img(cv::Mat(200, 300, CV_8UC3, cv::Scalar::all(3)), "small");
  const Patch p = extract_patch(img, cv::Point2d(150, 100), 550);
  EXPECT_TRUE(p.resized);
  EXPECT_EQ(p.image.width(), 550);
  EXPECT_EQ(p.image.height(), 550);
}

TEST(TenCrop, CountSizeAndPairing) {
  const ChannelStack s = random_stack(21, 550, 550, 3);
  const auto crops = ten_crop(s, 500);
  ASSERT_EQ(crops.size(), 10u);
  for (const auto& c : crops) {
    EXPECT_EQ(c.width(), 500);
    EXPECT_EQ(c.height(), 500);
    EXPECT_EQ(c.channels(), 21);
  }
  EXPECT_EQ(crops[0].data().at(0, 0, 0, 0), s.data().at(0, 0, 0, 0));
  EXPECT_EQ(crops[3].data().at(0, 5, 499, 499), s.data().at(0, 5, 549, 549));
  EXPECT_EQ(crops[4].data().at(0, 2, 0, 0), s.data().at(0, 2, 25, 25));
  for (int k = 0; k < 5; ++k)
    for (int y = 0; y < 500; y += 37)
      for (int x = 0; x < 500; x += 41)
        ASSERT_EQ(crops[k + 5].data().at(0, 7, y, x), crops[k].data().at(0, 7, y, 499 - x));
}

TEST(TenCrop, PureWindowing) {
  const ChannelStack s = random_stack(2, 40, 40, 4);
  std::set<float> values(s.data().span().begin(), s.data().span().end());
  for (const auto& c : ten_crop(s, 32))
    for (float v : c.data().span()) ASSERT_TRUE(values.count(v));
  EXPECT_THROW(ten_crop(s, 41), Error);
}

TEST(ClassifierBuild, LogitsForVariousSizes) {
  auto m = tiny();
  EXPECT_EQ(m->forward(random_stack(21, 300, 300, 5).data()).shape(), (nn::Shape{1, 2, 1, 1}));
  EXPECT_EQ(m->forward(random_stack(21, 64, 80, 6).data()).shape(), (nn::Shape{1, 2, 1, 1}));
  for (const auto& row : m->posteriors(random_stack(21, 64, 64, 7).data())) EXPECT_NEAR(row[0] + row[1], 1.0, 1e-6);
  EXPECT_THROW(m->forward(random_stack(20, 64, 64, 8).data()), Error);
}

TEST(ClassifierBuild, BackboneFamilies) {
  auto r = build_classifier({BackboneFamily::ResNet18, WeightsSource::RandomInit, {}, 1});
  EXPECT_EQ(r->feature_channels(), 512);
  EXPECT_EQ(r->forward(random_stack(21, 64, 64, 9).data()).shape().c, 2);
  auto d = build_classifier({BackboneFamily::DenseNet201, WeightsSource::RandomInit, {}, 1});
  EXPECT_EQ(d->feature_channels(), 1920);
  EXPECT_EQ(to_string(parse_backbone_family("densenet201-like")), "densenet201-like");
}

TEST(ClassifierBuild, ExternalWeightsLoadedAndChecked) {
  oracle::TempDir dir("cls");
  auto donor = tiny(5);
  nn::Container c{R"({"kind":"backbone"})", nn::export_params(*donor, "backbone")};
  nn::write_container(dir.path() / "bb.fsw", c);
  auto m = build_classifier({BackboneFamily::Tiny, WeightsSource::ExternalFile, dir.path() / "bb.fsw", 9});
  const auto a = nn::export_params(*donor, "backbone"), b = nn::export_params(*m, "backbone");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].second.numel(); ++k) ASSERT_EQ(a[i].second.data()[k], b[i].second.data()[k]);

  c.tensors[0].second = nn::Tensor({1, 1, 1, 1});
  nn::write_container(dir.path() / "bad.fsw", c);
  try {
    build_classifier({BackboneFamily::Tiny, WeightsSource::ExternalFile, dir.path() / "bad.fsw", 9});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Load);
    EXPECT_NE(std::string(e.what()).find(c.tensors[0].first), std::string::npos);
  }
  EXPECT_FALSE(backbone_shape_manifest(BackboneFamily::ResNet18).empty());
}

TEST(ClassifierBuild, EvalForwardDeterministic) {
  auto m = tiny(3);
  const ChannelStack s = random_stack(21, 64, 64, 10);
  const auto a = m->posteriors(s.data()), b = m->posteriors(s.data());
  EXPECT_EQ(a[0][1], b[0][1]);
}

TEST(ClassifierIo, SaveLoad) {
  oracle::TempDir dir("cls");
  auto m = tiny(4);
  save_classifier(dir.path() / "m.fsw", *m);
  auto back = load_classifier(dir.path() / "m.fsw");
  const ChannelStack s = random_stack(21, 64, 64, 11);
  EXPECT_EQ(m->posteriors(s.data())[0][1], back->posteriors(s.data())[0][1]);
}

TEST(ClassWeights, TrainingRowReciprocals) {
  const auto w = inverse_freq_weights({{Diagnosis::Glaucoma, 98.0 / 417}, {Diagnosis::Healthy, 319.0 / 417}});
  EXPECT_NEAR(w.at(Diagnosis::Glaucoma), 4.2551, 1e-4);
  EXPECT_NEAR(w.at(Diagnosis::Healthy), 1.3072, 1e-4);
  const auto b = inverse_freq_weights({{Diagnosis::Glaucoma, 0.5}, {Diagnosis::Healthy, 0.5}});
  EXPECT_DOUBLE_EQ(b.at(Diagnosis::Glaucoma), 2.0);
  EXPECT_THROW(inverse_freq_weights({{Diagnosis::Glaucoma, 0.0}}), Error);
}

TEST(ClassWeights, MatchTallyOfLabelList) {
  std::mt19937 rng(12);
  std::bernoulli_distribution coin(0.3);
  std::vector<int> labels(57);
  for (auto& l : labels) l = coin(rng);
  int g = 0;
  for (int l : labels) g += l;
  const double n = static_cast<double>(labels.size());
  const auto w = inverse_freq_weights({{Diagnosis::Glaucoma, g / n}, {Diagnosis::Healthy, (n - g) / n}});
  EXPECT_NEAR(w.at(Diagnosis::Glaucoma), n / g, 1e-12);
  EXPECT_NEAR(w.at(Diagnosis::Healthy), n / (n - g), 1e-12);
}

TEST(ClassLoss, TwoSampleGradientDouble) {
  const std::vector<double> z = {0.3, -1.2, 0.8, 0.1};  // N=2, C=2, P=1: sample-major planes
  const std::vector<std::uint8_t> t = {1, 0};
  const std::vector<double> w = {1.3072, 4.2551};
  std::vector<double> g(4);
  nn::weighted_cross_entropy_logits<double>(z, 2, 2, 1, t, w, g);
  for (int i = 0; i < 4; ++i) {
    auto zp = z, zm = z;
    zp[i] += 1e-6;
    zm[i] -= 1e-6;
    const double num = (nn::weighted_cross_entropy_logits<double>(zp, 2, 2, 1, t, w) -
                        nn::weighted_cross_entropy_logits<double>(zm, 2, 2, 1, t, w)) /
                       2e-6;
    EXPECT_LT(std::abs(g[i] - num) / std::abs(num), 1e-3);
  }
}

TEST(Screen, RiskIsMeanOfPosteriors) {
  std::vector<std::array<double, kTenCrops>> p(2);
  p[0].fill(0.8);
  p[1].fill(0.6);
  EXPECT_NEAR(mean_risk(p), 0.7, 1e-12);
  p[0].fill(0.5);
  p[1].fill(0.5);
  EXPECT_DOUBLE_EQ(mean_risk(p), 0.5);
}

TEST(Screen, ReportConsistentAndOrderInvariant) {
  auto a = tiny(1), b = tiny(2);
  const ChannelStack s = random_stack(21, 72, 72, 13);
  Classifier* ab[] = {a.get(), b.get()};
  Classifier* ba[] = {b.get(), a.get()};
  const ScreenReport r = screen_stack(ab, s, 64);
  ASSERT_EQ(r.posteriors.size(), 2u);
  double sum = 0;
  for (const auto& row : r.posteriors)
    for (double v : row) {
      EXPECT_GE(v, 0);
      EXPECT_LE(v, 1);
      sum += v;
    }
  EXPECT_NEAR(r.risk, sum / 20, 1e-9);
  EXPECT_NEAR(screen_stack(ba, s, 64).risk, r.risk, 1e-12);
}

TEST(Activations, ThreeMapsInRange) {
  oracle::TempDir dir("act");
  auto m = tiny(1);
  const auto files = dump_first_layer_activations(*m, random_stack(21, 64, 64, 14), dir.path(), "x");
  ASSERT_EQ(files.size(), 3u);
  for (const auto& f : files) {
    const cv::Mat img = cv::imread(f.string(), cv::IMREAD_UNCHANGED);
    ASSERT_EQ(img.type(), CV_8UC1);
    EXPECT_EQ(img.rows, 64);
  }
  const std::vector<float> flat(16, 2.5f);
  const cv::Mat gray = normalize_activation(flat.data(), 4, 4);
  EXPECT_EQ(cv::countNonZero(gray != 128), 0);
}

TEST(ClsTraining, SingleClassRejectedAndLrSchedule) {
  std::vector<ClsSample> samples;
  for (int i = 0; i < 2; ++i) samples.push_back({"s" + std::to_string(i), random_stack(21, 64, 64, 20 + i), Diagnosis::Healthy});
  ClsTrainConfig cfg;
  cfg.epochs = 1;
  cfg.crop_size = 56;
  auto m = tiny();
  EXPECT_THROW(train_classifier(*m, samples, samples, cfg), Error);

  samples.push_back({"g", random_stack(21, 64, 64, 30), Diagnosis::Glaucoma});
  cfg.epochs = 8;
  cfg.step_epochs = 7;
  int calls = 0;
  const auto r = train_classifier(*m, samples, samples, cfg, [&](const ClsEpochLog&, Classifier&) { return ++calls < 8; });
  ASSERT_EQ(r.log.size(), 8u);
  EXPECT_DOUBLE_EQ(r.log[6].lr, 1e-4);
  EXPECT_NEAR(r.log[7].lr, 1e-5, 1e-18);
  EXPECT_NEAR(r.class_weights.at(Diagnosis::Glaucoma), 3.0, 1e-12);
  EXPECT_NEAR(r.class_weights.at(Diagnosis::Healthy), 1.5, 1e-12);
}

TEST(ClsTraining, SameSeedSameFirstEpoch) {
  std::vector<ClsSample> samples;
  for (int i = 0; i < 4; ++i)
    samples.push_back({"s" + std::to_string(i), random_stack(21, 64, 64, 40 + i), i % 2 ? Diagnosis::Glaucoma : Diagnosis::Healthy});
  ClsTrainConfig cfg;
  cfg.epochs = 1;
  cfg.crop_size = 56;
  cfg.seed = 3;
  auto a = tiny(8), b = tiny(8);
  EXPECT_EQ(train_classifier(*a, samples, samples, cfg).log[0].train_loss,
            train_classifier(*b, samples, samples, cfg).log[0].train_loss);
}
