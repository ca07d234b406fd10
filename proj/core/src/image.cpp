#include "fundus/image.hpp"

#include "fundus/error.hpp"

namespace fundus {

CropGeometry CropGeometry::identity(int width, int height) {
  return CropGeometry{width, height, 0, 0, width, height, width, height};
}

cv::Point2d CropGeometry::to_source(cv::Point2d p) const {
  return {crop_x + (p.x + 0.5) * scale_x() - 0.5, crop_y + (p.y + 0.5) * scale_y() - 0.5};
}

cv::Point2d CropGeometry::to_frame(cv::Point2d p) const {
  return {(p.x - crop_x + 0.5) / scale_x() - 0.5, (p.y - crop_y + 0.5) / scale_y() - 0.5};
}

CropGeometry CropGeometry::then(const CropGeometry& next) const {
  // Only axis-aligned crop+scale maps compose exactly in integer windows when
  // this frame is unscaled; otherwise the window is rounded.
  CropGeometry out;
  out.source_width = source_width;
  out.source_height = source_height;
  out.crop_x = static_cast<int>(std::lround(crop_x + next.crop_x * scale_x()));
  out.crop_y = static_cast<int>(std::lround(crop_y + next.crop_y * scale_y()));
  out.crop_width = static_cast<int>(std::lround(next.crop_width * scale_x()));
  out.crop_height = static_cast<int>(std::lround(next.crop_height * scale_y()));
  out.width = next.width;
  out.height = next.height;
  return out;
}

FundusImage::FundusImage(cv::Mat rgb, std::string source_id)
    : FundusImage(rgb, std::move(source_id), CropGeometry::identity(rgb.cols, rgb.rows)) {}

FundusImage::FundusImage(cv::Mat rgb, std::string source_id, CropGeometry geometry)
    : pixels_(std::move(rgb)), source_id_(std::move(source_id)), geometry_(geometry) {
  require(pixels_.type() == CV_8UC3, ErrorCode::Format,
          "fundus image '" + source_id_ + "' must be 8-bit with exactly 3 channels");
  require(pixels_.rows >= kMinSide && pixels_.cols >= kMinSide, ErrorCode::Format,
          "fundus image '" + source_id_ + "' is " + std::to_string(pixels_.cols) + "x" +
              std::to_string(pixels_.rows) + ", minimum is 64x64");
  geometry_.width = pixels_.cols;
  geometry_.height = pixels_.rows;
}

LabelMask::LabelMask(int height, int width) : labels_(height, width, CV_8UC1, cv::Scalar(0)) {}

LabelMask::LabelMask(cv::Mat labels) : labels_(std::move(labels)) {
  require(labels_.type() == CV_8UC1, ErrorCode::Format, "label mask must be CV_8UC1");
  double lo = 0, hi = 0;
  cv::minMaxLoc(labels_, &lo, &hi);
  require(hi <= 2.0, ErrorCode::Encoding,
          "label value " + std::to_string(static_cast<int>(hi)) + " outside {0,1,2}");
}

cv::Mat LabelMask::disc_region() const {
  cv::Mat out;
  cv::compare(labels_, 1, out, cv::CMP_GE);
  return out / 255;
}

cv::Mat LabelMask::cup_region() const {
  cv::Mat out;
  cv::compare(labels_, 2, out, cv::CMP_EQ);
  return out / 255;
}

}  // namespace fundus
