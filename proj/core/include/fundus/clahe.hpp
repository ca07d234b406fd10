#pragma once

#include <string>
#include <vector>

#include <opencv2/core.hpp>

namespace fundus {

/// How a (w, h) grid pair is read: as the number of tiles per axis, or as
/// the tile size in pixels (converted to a count by ceiling division).
enum class GridMode { TileCount, TilePixels };

GridMode parse_grid_mode(const std::string& s);
std::string to_string(GridMode mode);

struct ClaheParams {
  int tile_w = 8;
  int tile_h = 8;
  double clip_limit = 2.0;

  /// Compact form used in config files and channel descriptors: "8x8:2".
  std::string to_string() const;
  static ClaheParams parse(const std::string& text);

  bool operator==(const ClaheParams&) const = default;
};

/// Parses "8x8:2;300x300:2" style lists.
std::vector<ClaheParams> parse_clahe_list(const std::string& text);
std::string format_clahe_list(const std::vector<ClaheParams>& list);

/// Segmentation CLAHE variants: grid (8,8) and (300,300), both clip 2.
std::vector<ClaheParams> default_segmentation_clahe();
/// Classification CLAHE variants, six rows from (8,8)/2 to (500,500)/2.
std::vector<ClaheParams> default_classification_clahe();

/// Tile partition of one axis: tile t covers [bounds[t], bounds[t+1]).
std::vector<int> tile_bounds(int extent, int tiles);

/// Contrast-limited adaptive histogram equalization of an 8-bit single
/// channel image.
///
/// The image is cut into a grid of tiles with integer boundaries
/// floor(t * extent / tiles). Each tile's 256-bin histogram is clipped at
/// clip_limit * tile_pixels / 256 and the clipped excess is spread evenly over
/// all 256 bins (exact fixed-point arithmetic, clip_limit resolved to 1/256).
/// The tile mapping is round(255 * cdf / tile_pixels). Output pixels
/// bilinearly blend the mappings of the four tiles whose centers surround the
/// pixel (edge pixels use the nearest tile row/column); blend weights are
/// exact rationals and the result is rounded half up in integer arithmetic.
///
/// Throws Parameter when the grid is larger than the image along either axis.
cv::Mat clahe(const cv::Mat& gray, const ClaheParams& params,
              GridMode mode = GridMode::TileCount);

/// Per-channel CLAHE of a CV_8UC3 image.
cv::Mat clahe_rgb(const cv::Mat& rgb, const ClaheParams& params,
                  GridMode mode = GridMode::TileCount);

}  // namespace fundus
