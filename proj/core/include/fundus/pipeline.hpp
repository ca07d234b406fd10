#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fundus/classify.hpp"
#include "fundus/config.hpp"
#include "fundus/evaluate.hpp"
#include "fundus/postprocess.hpp"

namespace fundus {

/// Artifact locations under the configured work and data directories.
struct RunPaths {
  explicit RunPaths(const PipelineConfig& cfg);

  std::filesystem::path data_dir;
  std::filesystem::path manifest;
  std::filesystem::path truth;
  std::filesystem::path split;
  std::filesystem::path seg_dir;
  std::filesystem::path probs_dir;
  std::filesystem::path post_dir;
  std::filesystem::path post_results;
  std::filesystem::path post_masks;
  std::filesystem::path cls_dir;
  std::filesystem::path screen_dir;
  std::filesystem::path eval_dir;
  std::filesystem::path activations_dir;

  std::filesystem::path seg_model(int in_channels) const;
  std::filesystem::path seg_log(int in_channels) const;
  std::filesystem::path probs(const std::string& id) const;
  std::filesystem::path post_mask(const std::string& id) const;
  std::filesystem::path cls_model(std::size_t index) const;
  std::filesystem::path cls_log(std::size_t index) const;
  std::filesystem::path screen_report(const std::string& id) const;
};

/// "config=<hash> seed=<seed>" line written at the top of logs.
std::string provenance(const PipelineConfig& cfg, std::uint64_t seed);

// One function per command-line command. Progress goes to `log`.

DatasetManifest run_synth(const PipelineConfig& cfg, std::ostream& log);
SplitSpec run_split(const PipelineConfig& cfg, std::ostream& log);
void run_train_seg(const PipelineConfig& cfg, std::ostream& log);
std::vector<std::string> run_infer_seg(const PipelineConfig& cfg, Subset subset, std::ostream& log);
std::vector<ResultRow> run_postprocess(const PipelineConfig& cfg, Subset subset, std::ostream& log);
void run_train_cls(const PipelineConfig& cfg, std::ostream& log);
std::vector<ScreenReport> run_screen(const PipelineConfig& cfg, Subset subset, std::ostream& log);
/// Full chain on one image file: segmentation ensemble, postprocess,
/// classifier ensemble. Segmentation failures surface as Screening errors.
ScreenReport run_screen_image(const PipelineConfig& cfg, const std::filesystem::path& image, std::ostream& log);
MetricsReport run_evaluate(const PipelineConfig& cfg, Subset subset, std::ostream& log);
std::vector<std::filesystem::path> run_dump_activations(const PipelineConfig& cfg, const std::filesystem::path& image,
                                                        std::size_t model_index, std::ostream& log);

std::string screen_report_json(const ScreenReport& r, const PipelineConfig& cfg);
/// Reads back id, risk and the posterior matrix of a report file.
ScreenReport read_screen_report(const std::filesystem::path& path);

}  // namespace fundus
