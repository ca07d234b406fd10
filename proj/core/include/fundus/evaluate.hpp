#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fundus/dataio.hpp"
#include "fundus/metrics.hpp"

namespace fundus {

struct PerImageMetrics {
  std::string id;
  Diagnosis label = Diagnosis::Healthy;
  std::string status = "ok";  // postprocess status
  double dice_disc = 0;
  double dice_cup = 0;
  double cdr_true = 0;
  std::optional<double> cdr_pred;
  std::optional<double> risk;
};

struct MetricsReport {
  std::string subset;
  std::string config_hash;
  std::map<std::string, std::uint64_t> seeds;
  double dice_disc = 0;  // mean over images
  double dice_cup = 0;
  double cdr_mae = 0;    // over images with a CDR
  std::optional<double> auc;
  double target_specificity = 0.85;
  std::optional<OperatingPoint> sens_at_spec;
  int failures = 0;  // images without a fused segmentation
  std::vector<PerImageMetrics> per_image;

  /// Every metric present and inside its range.
  bool in_range() const;
};

/// Aggregates per-image rows. AUC and the operating point need risks for
/// both classes; otherwise they stay empty.
MetricsReport summarize(std::vector<PerImageMetrics> rows, double target_specificity);

std::string to_json(const MetricsReport& r);
/// Fixed-width text table: summary lines then one row per image.
std::string format_table(const MetricsReport& r);
void write_per_image_csv(const std::filesystem::path& path, const MetricsReport& r);

}  // namespace fundus
