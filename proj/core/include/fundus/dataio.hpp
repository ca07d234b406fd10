#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fundus/image.hpp"

namespace fundus {

namespace fs = std::filesystem;

enum class Diagnosis : int { Healthy = 0, Glaucoma = 1 };
enum class DatasetTag { Refuge, Drishti, Synth };

std::string to_string(Diagnosis d);
std::string to_string(DatasetTag t);
Diagnosis parse_diagnosis(const std::string& s);
DatasetTag parse_dataset_tag(const std::string& s);

FundusImage load_image(const fs::path& path);
void save_image(const FundusImage& image, const fs::path& path);

// Mask files use a grayscale alphabet: 255 background, 128 disc, 0 cup.
std::uint8_t encode_label(Label label);
Label decode_label(std::uint8_t file_value);  // throws Encoding outside {0,128,255}

LabelMask load_mask(const fs::path& path);
void save_mask(const LabelMask& mask, const fs::path& path);

struct ManifestEntry {
  std::string id;
  fs::path image;
  std::optional<fs::path> mask;
  Diagnosis label = Diagnosis::Healthy;
  DatasetTag dataset = DatasetTag::Synth;
};

/// Sample table serialized as `id,image,mask,label,dataset` rows. Relative
/// paths are resolved against `root` (the directory holding the file).
class DatasetManifest {
 public:
  DatasetManifest() = default;
  DatasetManifest(std::vector<ManifestEntry> entries, fs::path root);

  static DatasetManifest read(const fs::path& csv_path);
  void write(const fs::path& csv_path) const;

  const std::vector<ManifestEntry>& entries() const { return entries_; }
  const fs::path& root() const { return root_; }
  std::size_t size() const { return entries_.size(); }

  const ManifestEntry& at(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.contains(id); }
  std::vector<std::string> ids() const;

  fs::path image_path(const ManifestEntry& e) const;
  fs::path mask_path(const ManifestEntry& e) const;  // throws Argument if absent

 private:
  void validate() const;

  std::vector<ManifestEntry> entries_;
  std::map<std::string, std::size_t> index_;
  fs::path root_;
};

struct SplitRatios {
  double train = 0.7;
  double val = 0.2;
  double test = 0.1;
};

enum class Subset { Train, Val, Test, All };
Subset parse_subset(const std::string& s);

struct SplitSpec {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
  std::uint64_t seed = 0;

  std::vector<std::string> ids(Subset subset) const;

  static SplitSpec read(const fs::path& csv_path);
  void write(const fs::path& csv_path) const;

  bool operator==(const SplitSpec&) const = default;
};

/// Per-class largest-remainder allocation followed by a seeded shuffle.
/// Every split receives at least one member of every class.
SplitSpec stratified_split(const DatasetManifest& manifest, SplitRatios ratios,
                           std::uint64_t seed);

std::map<Diagnosis, double> class_frequencies(const DatasetManifest& manifest,
                                              std::span<const std::string> ids);

/// Ground-truth geometry of one generated fixture. The cup is the disc
/// ellipse scaled by `cup_scale` about the same center, so its vertical
/// cup-to-disc ratio equals `cup_scale`.
struct SyntheticTruth {
  std::string id;
  double disc_cx = 0, disc_cy = 0;
  double disc_rx = 0, disc_ry = 0;  // semi-axes along the rotated x/y axes
  double theta = 0;                 // radians
  double cup_scale = 0;
  Diagnosis label = Diagnosis::Healthy;
};

inline constexpr double kSyntheticGlaucomaRatio = 0.6;

Diagnosis label_for_ratio(double vertical_cdr);

/// Writes n fundus-like images, masks, `manifest.csv` and `truth.csv` into
/// out_dir. Output is byte-identical for a fixed seed.
DatasetManifest generate_synthetic_fixture(int n, std::uint64_t seed, int size,
                                           const fs::path& out_dir);

std::vector<SyntheticTruth> read_synthetic_truth(const fs::path& csv_path);

}  // namespace fundus
