#pragma once

#include <cstdint>
#include <string>

#include <opencv2/core.hpp>

namespace fundus {

/// Maps pixel coordinates of a derived frame (crop and/or resize) back to
/// the source raster it was cut from. Pixel centers sit at integer
/// coordinates in both frames.
struct CropGeometry {
  int source_width = 0;
  int source_height = 0;
  int crop_x = 0;
  int crop_y = 0;
  int crop_width = 0;
  int crop_height = 0;
  int width = 0;   // frame size after resize
  int height = 0;

  static CropGeometry identity(int width, int height);

  double scale_x() const { return static_cast<double>(crop_width) / width; }
  double scale_y() const { return static_cast<double>(crop_height) / height; }

  cv::Point2d to_source(cv::Point2d frame_point) const;
  cv::Point2d to_frame(cv::Point2d source_point) const;

  /// Geometry of `next` (defined relative to this frame) expressed relative
  /// to this geometry's source.
  CropGeometry then(const CropGeometry& next) const;

  bool operator==(const CropGeometry&) const = default;
};

/// 8-bit RGB raster with source identity. Pixels are stored in RGB order
/// (not OpenCV's BGR), CV_8UC3, at least 64x64.
class FundusImage {
 public:
  static constexpr int kMinSide = 64;

  FundusImage() = default;
  FundusImage(cv::Mat rgb, std::string source_id);
  FundusImage(cv::Mat rgb, std::string source_id, CropGeometry geometry);

  const cv::Mat& pixels() const { return pixels_; }
  const std::string& source_id() const { return source_id_; }
  const CropGeometry& geometry() const { return geometry_; }
  int width() const { return pixels_.cols; }
  int height() const { return pixels_.rows; }
  bool empty() const { return pixels_.empty(); }

 private:
  cv::Mat pixels_;
  std::string source_id_;
  CropGeometry geometry_;
};

enum class Label : std::uint8_t { Background = 0, Disc = 1, Cup = 2 };

/// Per-pixel class map over {background, disc, cup}. Disc-region pixels are
/// those labelled Disc or Cup.
class LabelMask {
 public:
  LabelMask() = default;
  LabelMask(int height, int width);
  /// Takes a CV_8UC1 matrix of label values; throws Encoding on values > 2.
  explicit LabelMask(cv::Mat labels);

  const cv::Mat& labels() const { return labels_; }
  cv::Mat& labels() { return labels_; }
  int width() const { return labels_.cols; }
  int height() const { return labels_.rows; }
  bool empty() const { return labels_.empty(); }

  Label at(int row, int col) const {
    return static_cast<Label>(labels_.at<std::uint8_t>(row, col));
  }

  /// 0/1 CV_8UC1 mask of disc-region pixels (disc or cup).
  cv::Mat disc_region() const;
  /// 0/1 CV_8UC1 mask of cup pixels.
  cv::Mat cup_region() const;

 private:
  cv::Mat labels_;
};

}  // namespace fundus
