#include <gtest/gtest.h>

#include <opencv2/imgproc.hpp>

#include <fstream>
#include <iterator>
#include <set>

#include <opencv2/imgcodecs.hpp>

#include "fundus/dataio.hpp"
#include "fundus/error.hpp"
#include "fundus/postprocess.hpp"
#include "support/oracles.hpp"

using namespace fundus;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::Contract;
}

DatasetManifest counted_manifest(int glaucoma, int healthy) {
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < glaucoma + healthy; ++i) {
    ManifestEntry e;
    e.id = "img" + std::to_string(i);
    e.image = "images/" + e.id + ".png";
    e.label = i < glaucoma ? Diagnosis::Glaucoma : Diagnosis::Healthy;
    entries.push_back(e);
  }
  return DatasetManifest(entries, ".");
}

int count_label(const DatasetManifest& m, const std::vector<std::string>& ids, Diagnosis d) {
  int n = 0;
  for (const auto& id : ids) n += m.at(id).label == d;
  return n;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(LoadImage, KeepsAcquisitionGeometry) {
  oracle::TempDir dir("img");
  const auto path = dir.path() / "refuge.png";
  cv::imwrite(path.string(), cv::Mat(2056, 2124, CV_8UC3, cv::Scalar(10, 20, 30)));
  const FundusImage img = load_image(path);
  EXPECT_EQ(img.height(), 2056);
  EXPECT_EQ(img.width(), 2124);
  EXPECT_EQ(img.source_id(), "refuge");
  // stored RGB: file BGR (10,20,30) reads back as R=30
  EXPECT_EQ(img.pixels().at<cv::Vec3b>(0, 0)[0], 30);
}

TEST(LoadImage, BlackFixture) {
  oracle::TempDir dir("img");
  const auto path = dir.path() / "black.png";
  cv::imwrite(path.string(), cv::Mat(64, 64, CV_8UC3, cv::Scalar::all(0)));
  const FundusImage img = load_image(path);
  EXPECT_EQ(cv::countNonZero(img.pixels().reshape(1)), 0);
}

TEST(LoadImage, Errors) {
  oracle::TempDir dir("img");
  const auto gray = dir.path() / "gray.png";
  cv::imwrite(gray.string(), cv::Mat(64, 64, CV_8UC1, cv::Scalar(7)));
  EXPECT_EQ(code_of([&] { load_image(gray); }), ErrorCode::Format);
  EXPECT_EQ(code_of([&] { load_image(dir.path() / "missing.png"); }), ErrorCode::NotFound);
  const auto junk = dir.path() / "junk.png";
  std::ofstream(junk) << "not an image";
  EXPECT_EQ(code_of([&] { load_image(junk); }), ErrorCode::Format);
}

TEST(LoadMask, DecodesAlphabet) {
  oracle::TempDir dir("mask");
  cv::Mat file(80, 80, CV_8UC1, cv::Scalar(255));
  cv::circle(file, {40, 40}, 20, cv::Scalar(128), cv::FILLED);
  cv::circle(file, {40, 40}, 8, cv::Scalar(0), cv::FILLED);
  const auto path = dir.path() / "m.png";
  cv::imwrite(path.string(), file);
  const LabelMask m = load_mask(path);
  EXPECT_EQ(m.at(0, 0), Label::Background);
  EXPECT_EQ(m.at(40, 25), Label::Disc);
  EXPECT_EQ(m.at(40, 40), Label::Cup);
  EXPECT_EQ(cv::countNonZero(m.cup_region() > m.disc_region()), 0);
}

TEST(LoadMask, AllBackground) {
  oracle::TempDir dir("mask");
  const auto path = dir.path() / "m.png";
  cv::imwrite(path.string(), cv::Mat(64, 64, CV_8UC1, cv::Scalar(255)));
  EXPECT_EQ(cv::countNonZero(load_mask(path).labels()), 0);
}

TEST(LoadMask, RejectsForeignValue) {
  oracle::TempDir dir("mask");
  cv::Mat file(64, 64, CV_8UC1, cv::Scalar(255));
  file.at<std::uint8_t>(3, 3) = 37;
  const auto path = dir.path() / "m.png";
  cv::imwrite(path.string(), file);
  try {
    load_mask(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Encoding);
    EXPECT_NE(std::string(e.what()).find("37"), std::string::npos);
  }
}

TEST(LoadMask, EncodeDecodeIdentityOnAlphabet) {
  for (int v : {0, 128, 255}) EXPECT_EQ(encode_label(decode_label(static_cast<std::uint8_t>(v))), v);
  oracle::TempDir dir("mask");
  cv::Mat labels(64, 64, CV_8UC1);
  cv::randu(labels, 0, 3);
  const LabelMask m(labels);
  save_mask(m, dir.path() / "r.png");
  EXPECT_EQ(cv::countNonZero(load_mask(dir.path() / "r.png").labels() != labels), 0);
}

TEST(StratifiedSplit, TotalRowProportions) {
  const auto m = counted_manifest(110, 391);
  const SplitSpec s = stratified_split(m, {0.7, 0.2, 0.1}, 5);
  EXPECT_NEAR(count_label(m, s.train_ids, Diagnosis::Glaucoma), 77, 1);
  EXPECT_NEAR(count_label(m, s.train_ids, Diagnosis::Healthy), 273, 1);
  EXPECT_NEAR(count_label(m, s.val_ids, Diagnosis::Glaucoma), 22, 1);
  EXPECT_NEAR(count_label(m, s.test_ids, Diagnosis::Healthy), 39.1, 1);
}

TEST(StratifiedSplit, BalancedExactDivision) {
  const auto m = counted_manifest(10, 10);
  const SplitSpec s = stratified_split(m, {0.8, 0.1, 0.1}, 1);
  for (Diagnosis d : {Diagnosis::Glaucoma, Diagnosis::Healthy}) {
    EXPECT_EQ(count_label(m, s.train_ids, d), 8);
    EXPECT_EQ(count_label(m, s.val_ids, d), 1);
    EXPECT_EQ(count_label(m, s.test_ids, d), 1);
  }
}

TEST(StratifiedSplit, DeterministicPerSeed) {
  const auto m = counted_manifest(30, 50);
  EXPECT_EQ(stratified_split(m, {}, 9), stratified_split(m, {}, 9));
  EXPECT_NE(stratified_split(m, {}, 9).train_ids, stratified_split(m, {}, 10).train_ids);
}

TEST(StratifiedSplit, IsPartitionForManySizes) {
  for (int g = 3; g < 25; g += 3)
    for (int h = 3; h < 40; h += 7) {
      const auto m = counted_manifest(g, h);
      const SplitSpec s = stratified_split(m, {0.7, 0.2, 0.1}, static_cast<std::uint64_t>(g * 100 + h));
      std::multiset<std::string> all;
      for (auto sub : {Subset::Train, Subset::Val, Subset::Test})
        for (const auto& id : s.ids(sub)) all.insert(id);
      EXPECT_EQ(all.size(), m.size());
      EXPECT_EQ(std::set<std::string>(all.begin(), all.end()).size(), m.size());
      for (auto sub : {Subset::Train, Subset::Val, Subset::Test})
        for (Diagnosis d : {Diagnosis::Glaucoma, Diagnosis::Healthy})
          EXPECT_GE(count_label(m, s.ids(sub), d), 1);
    }
}

TEST(StratifiedSplit, Errors) {
  EXPECT_EQ(code_of([] { stratified_split(counted_manifest(2, 10), {}, 1); }), ErrorCode::Stratification);
  EXPECT_EQ(code_of([] { stratified_split(counted_manifest(5, 5), {0.5, 0.5, 0.5}, 1); }), ErrorCode::Argument);
}

TEST(ClassFrequencies, TrainingRow) {
  const auto m = counted_manifest(98, 319);
  const auto ids = m.ids();
  const auto f = class_frequencies(m, ids);
  EXPECT_DOUBLE_EQ(f.at(Diagnosis::Glaucoma), 98.0 / 417);
  EXPECT_DOUBLE_EQ(f.at(Diagnosis::Healthy), 319.0 / 417);
}

TEST(ClassFrequencies, SingleClassAndBalanced) {
  const auto m = counted_manifest(4, 4);
  const std::vector<std::string> g = {"img0", "img1"};
  EXPECT_DOUBLE_EQ(class_frequencies(m, g).at(Diagnosis::Glaucoma), 1.0);
  const auto ids = m.ids();
  EXPECT_DOUBLE_EQ(class_frequencies(m, ids).at(Diagnosis::Healthy), 0.5);
  EXPECT_EQ(code_of([&] { class_frequencies(m, {}); }), ErrorCode::Argument);
}

TEST(ClassFrequencies, SumToOne) {
  for (int g = 1; g < 30; g += 4) {
    const auto m = counted_manifest(g, 3 * g + 1);
    const auto ids = m.ids();
    double sum = 0;
    for (const auto& [k, v] : class_frequencies(m, ids)) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Manifest, RoundTrip) {
  oracle::TempDir dir("manifest");
  std::vector<ManifestEntry> entries(2);
  entries[0] = {"a", "images/a.png", fs::path("masks/a.png"), Diagnosis::Glaucoma, DatasetTag::Refuge};
  entries[1] = {"b", "images/b.png", std::nullopt, Diagnosis::Healthy, DatasetTag::Drishti};
  DatasetManifest(entries, dir.path()).write(dir.path() / "manifest.csv");
  const auto m = DatasetManifest::read(dir.path() / "manifest.csv");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.at("a").label, Diagnosis::Glaucoma);
  EXPECT_FALSE(m.at("b").mask.has_value());
  EXPECT_EQ(m.image_path(m.at("a")), dir.path() / "images/a.png");
  EXPECT_EQ(code_of([&] { m.mask_path(m.at("b")); }), ErrorCode::Argument);
}

TEST(SyntheticFixture, CupInsideDiscAndLabelsFollowRatio) {
  oracle::TempDir dir("synth");
  const auto m = generate_synthetic_fixture(8, 1, 160, dir.path());
  ASSERT_EQ(m.size(), 8u);
  const auto truth = read_synthetic_truth(dir.path() / "truth.csv");
  ASSERT_EQ(truth.size(), 8u);
  for (const auto& t : truth) {
    const LabelMask mask = load_mask(m.mask_path(m.at(t.id)));
    const cv::Mat disc = mask.disc_region(), cup = mask.cup_region();
    EXPECT_GT(cv::countNonZero(cup), 0);
    EXPECT_EQ(cv::countNonZero(cup > disc), 0);
    // strictly inside: the cup never touches the disc boundary ring
    EXPECT_LT(cv::countNonZero(cup), cv::countNonZero(disc));
    EXPECT_EQ(t.label, label_for_ratio(t.cup_scale));
    EXPECT_EQ(m.at(t.id).label, t.label);
    EXPECT_NEAR(vertical_cdr(mask), t.cup_scale, 0.06);
  }
  EXPECT_EQ(label_for_ratio(0.7), Diagnosis::Glaucoma);
  EXPECT_EQ(label_for_ratio(0.6), Diagnosis::Healthy);
}

TEST(SyntheticFixture, ByteIdenticalPerSeed) {
  oracle::TempDir a("synth"), b("synth");
  generate_synthetic_fixture(3, 7, 128, a.path());
  generate_synthetic_fixture(3, 7, 128, b.path());
  for (const auto& e : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), a.path());
    EXPECT_EQ(slurp(e.path()), slurp(b.path() / rel)) << rel;
  }
}
