#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fundus/classify.hpp"
#include "fundus/clahe.hpp"
#include "fundus/dataio.hpp"
#include "fundus/nn/optim.hpp"
#include "fundus/postprocess.hpp"
#include "fundus/segnet.hpp"

namespace fundus {

/// Resolved pipeline settings. Read from an INI file with the sections
/// [paths] [data] [segmentation] [clahe] [postprocess] [classification]
/// [screening]; keys not listed in `PipelineConfig::keys()` are rejected.
/// Relative paths resolve against the config file's directory.
struct PipelineConfig {
  std::filesystem::path base_dir;  // directory of the config file

  // [paths]
  std::filesystem::path work_dir = "run";
  std::filesystem::path data_dir = "run/data";

  // [data]
  int synth_count = 32;
  int synth_size = 192;
  std::uint64_t data_seed = 1;
  std::uint64_t split_seed = 2;
  SplitRatios split{};

  // [segmentation]
  SegPreset seg_preset = SegPreset::Tiny;
  int seg_input_size = 128;
  std::vector<int> seg_members = {5, 11};  // input channels per ensemble member
  int seg_epochs = 50;
  int seg_batch_size = 4;
  double seg_lr0 = 1e-4;
  nn::PlateauDecay lr_decay = nn::PlateauDecay::TenPercent;
  int plateau_patience = 3;
  double plateau_threshold = 1e-4;
  bool augment = true;
  double rotation_range = 360.0;
  double flip_probability = 0.5;
  std::uint64_t seg_seed = 3;

  // [clahe]
  GridMode grid_mode = GridMode::TileCount;
  std::vector<ClaheParams> seg_clahe = default_segmentation_clahe();
  std::vector<ClaheParams> cls_clahe = default_classification_clahe();

  // [postprocess]
  RoughMaskParams rough{};
  EllipseMode ellipse_mode = EllipseMode::BoundaryLsq;

  // [classification]
  std::vector<BackboneFamily> backbones = {BackboneFamily::DenseNet201, BackboneFamily::ResNet18};
  WeightsSource weights_source = WeightsSource::RandomInit;
  std::vector<std::filesystem::path> backbone_weights;  // one per backbone when external-file
  int patch_size = 550;
  int crop_size = 500;
  int cls_epochs = 80;
  int cls_batch_size = 4;
  double cls_lr0 = 1e-4;
  int step_epochs = 7;
  double step_gamma = 0.1;
  std::uint64_t cls_seed = 4;

  // [screening]
  double target_specificity = 0.85;

  static PipelineConfig load(const std::filesystem::path& ini_path);
  /// Defaults, with relative paths resolved against `base_dir`.
  static PipelineConfig defaults(const std::filesystem::path& base_dir);

  /// Every accepted "section.key".
  static const std::vector<std::string>& keys();

  void validate() const;

  /// Canonical "section.key = value" text of every setting, sorted by key.
  /// Paths appear as written relative to the config directory.
  std::string canonical() const;
  /// SHA-256 (hex) of canonical().
  std::string hash() const;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  std::filesystem::path work(const std::filesystem::path& rel) const { return resolve(work_dir) / rel; }

  SegTrainConfig seg_train_config() const;
  ClsTrainConfig cls_train_config() const;
  PostprocessParams postprocess_params() const;
  ScreenParams screen_params() const;
};

/// Hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

}  // namespace fundus
