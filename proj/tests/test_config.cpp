#include <gtest/gtest.h>

#include <fstream>

#include "fundus/config.hpp"
#include "fundus/error.hpp"
#include "support/oracles.hpp"

using namespace fundus;

namespace {

std::filesystem::path write_ini(const std::filesystem::path& dir, const std::string& name, const std::string& body) {
  const auto p = dir / name;
  std::ofstream(p) << body;
  return p;
}

ErrorCode code_of(const std::filesystem::path& p) {
  try {
    PipelineConfig::load(p).validate();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Contract;
}

}  // namespace

TEST(Config, DefaultsValidate) {
  EXPECT_NO_THROW(PipelineConfig::defaults("/tmp").validate());
}

TEST(Config, LoadsValuesAndResolvesPaths) {
  oracle::TempDir dir("cfg");
  const auto p = write_ini(dir.path(), "a.ini",
                           "[paths]\nwork_dir = out\n[segmentation]\nepochs = 7\nmembers = 5\n"
                           "[classification]\nbackbones = tiny\n");
  const PipelineConfig c = PipelineConfig::load(p);
  EXPECT_EQ(c.seg_epochs, 7);
  EXPECT_EQ(c.seg_members, std::vector<int>{5});
  ASSERT_EQ(c.backbones.size(), 1u);
  EXPECT_EQ(c.backbones[0], BackboneFamily::Tiny);
  EXPECT_EQ(c.resolve(c.work_dir), dir.path() / "out");
}

TEST(Config, UnknownKeyAndBadValueRejected) {
  oracle::TempDir dir("cfg");
  EXPECT_EQ(code_of(write_ini(dir.path(), "a.ini", "[data]\nsynth_cuont = 3\n")), ErrorCode::Config);
  EXPECT_EQ(code_of(write_ini(dir.path(), "b.ini", "[data]\nsynth_count = many\n")), ErrorCode::Config);
  EXPECT_EQ(code_of(write_ini(dir.path(), "c.ini", "[data]\nsplit_train = 0.9\n")), ErrorCode::Config);
  EXPECT_EQ(code_of(write_ini(dir.path(), "d.ini", "[postprocess]\nellipse_mode = max_inscribed\n")),
            ErrorCode::Config);
  EXPECT_EQ(code_of(dir.path() / "missing.ini"), ErrorCode::NotFound);
}

TEST(Config, HashStableAndSensitive) {
  oracle::TempDir dir("cfg");
  const auto a = PipelineConfig::load(write_ini(dir.path(), "a.ini", "[segmentation]\nepochs = 7\n"));
  const auto b = PipelineConfig::load(write_ini(dir.path(), "b.ini", "[segmentation]\nepochs   =   7\n\n"));
  const auto c = PipelineConfig::load(write_ini(dir.path(), "c.ini", "[segmentation]\nepochs = 8\n"));
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(a.hash().size(), 64u);
}

TEST(Config, CanonicalCoversEveryKey) {
  const std::string text = PipelineConfig::defaults("/tmp").canonical();
  for (const auto& k : PipelineConfig::keys()) EXPECT_NE(text.find(k + " = "), std::string::npos) << k;
}

TEST(Config, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
