#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "fundus/image.hpp"
#include "fundus/segnet.hpp"

namespace fundus {

/// Ellipse in pixel coordinates (pixel centers at integers). a is the
/// semi-major axis, theta the direction of a measured from +x towards +y
/// (image rows grow downwards), normalized to [0, pi).
struct EllipseParams {
  double cx = 0, cy = 0;
  double a = 0, b = 0;
  double theta = 0;

  double area() const;
};

/// Swaps axes so a >= b and wraps theta into [0, pi).
EllipseParams normalized(EllipseParams e);

/// 0/1 CV_8UC1 raster of the pixel centers inside the ellipse.
cv::Mat rasterize_ellipse(const EllipseParams& e, int height, int width);

enum class EllipseMode { BoundaryLsq, MaxInscribed };

EllipseMode parse_ellipse_mode(const std::string& s);
std::string to_string(EllipseMode m);

struct EllipseFit {
  EllipseParams ellipse;
  bool fallback = false;   // bounding-box ellipse used
  int boundary_points = 0;
};

/// Direct least-squares ellipse fit to the outer boundary of the largest
/// 8-connected component (holes filled). Boundary samples are the midpoints
/// of the pixel edges separating the component from the outside. With fewer
/// than 5 boundary pixels, or a fit that is not a finite ellipse, returns the
/// ellipse inscribed in the component's bounding box. Empty mask throws
/// NoDetection.
EllipseFit fit_max_ellipse(const cv::Mat& binary, EllipseMode mode = EllipseMode::BoundaryLsq);

/// Conic coefficients (A, B, C, D, E, F) of the direct least-squares fit of
/// A x^2 + B xy + C y^2 + D x + E y + F = 0 under 4AC - B^2 = 1, or nothing
/// when no ellipse solution exists.
std::optional<std::array<double, 6>> fit_conic(std::span<const cv::Point2d> points);
std::optional<EllipseParams> conic_to_ellipse(const std::array<double, 6>& conic);

/// Largest 8-connected component of a binary mask (ties: first in raster
/// order), as 0/1 CV_8UC1. Empty input gives an empty (all-zero) mask.
cv::Mat largest_component(const cv::Mat& binary);
/// Sets enclosed background regions (not 4-connected to the border) to 1.
cv::Mat fill_holes(const cv::Mat& binary);
/// Disk structuring element with radius r: offsets with dx^2 + dy^2 <= r^2.
cv::Mat disk_element(int radius);

// ---------------------------------------------------------------------------

struct RoughMaskParams {
  double median_fraction = 0.05;   // median kernel ~ width / 20, forced odd, >= 3
  double percentile = 98.0;        // threshold: values strictly above this percentile
  double closing_fraction = 0.02;  // closing disk radius / width
  bool keep_largest = true;
  double dilation_fraction = 0.05;  // dilation disk radius / width

  int median_kernel(int width) const;
  int closing_radius(int width) const;
  int dilation_radius(int width) const;
};

struct RoughMask {
  cv::Mat mask;  // 0/1 CV_8UC1
  bool fallback = false;  // thresholding selected nothing; full-image mask
};

/// Nearest-rank percentile of an 8-bit single-channel raster.
int percentile_value(const cv::Mat& gray, double percentile);

/// Red-channel median filter, percentile threshold, closing, largest
/// component, dilation.
RoughMask rough_disc_mask(const FundusImage& img, const RoughMaskParams& p = {});

/// Multiplies the disc and cup channels by the mask and moves the removed
/// probability into background.
SegOutput suppress_false_positives(const SegOutput& probs, const cv::Mat& mask);

// ---------------------------------------------------------------------------

struct FinalSegmentation {
  EllipseParams disc;
  EllipseParams cup;
  LabelMask mask;        // rasterized ellipses, cup clipped to the disc
  double cdr = 0;        // vertical cup extent / vertical disc extent
  CropGeometry geometry;  // frame of `mask` and the ellipses relative to the source image

  /// Disc center in source-image coordinates.
  cv::Point2d disc_center_source() const;
};

/// Row span of the region, last row minus first row plus one (0 if empty).
int vertical_extent(const cv::Mat& binary);

/// Vertical cup-to-disc ratio of a label mask (row counts). Throws
/// CdrUndefined when disc or cup is empty.
double vertical_cdr(const LabelMask& mask);

FinalSegmentation fuse(const EllipseParams& disc, const EllipseParams& cup, int height, int width);

struct PostprocessResult {
  std::string id;
  FinalSegmentation seg;
  bool rough_fallback = false;
  bool disc_fit_fallback = false;
  bool cup_fit_fallback = false;
};

struct PostprocessParams {
  RoughMaskParams rough{};
  EllipseMode ellipse_mode = EllipseMode::BoundaryLsq;
};

/// Full chain on one image: rough mask on `frame` (the image the
/// probabilities were predicted for), suppression, argmax, per-class ellipse
/// fit, fusion. Errors from fitting or fusion propagate.
PostprocessResult postprocess(const SegOutput& probs, const FundusImage& frame, const PostprocessParams& p = {});

/// Per-image results table: id, disc/cup ellipses (source coordinates), cdr,
/// fallback flags, status.
struct ResultRow {
  std::string id;
  std::string status = "ok";  // or the error message
  std::optional<PostprocessResult> result;
};
void write_results_table(const std::filesystem::path& path, std::span<const ResultRow> rows);

struct ResultRecord {
  std::string id;
  std::string status;
  EllipseParams disc, cup;  // source coordinates
  double cdr = 0;
};
std::vector<ResultRecord> read_results_table(const std::filesystem::path& path);

/// Ellipse expressed in the source frame of `geometry`.
EllipseParams to_source(const EllipseParams& e, const CropGeometry& geometry);

}  // namespace fundus
