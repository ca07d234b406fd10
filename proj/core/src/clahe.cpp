#include "fundus/clahe.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>

#include "fundus/error.hpp"
#include "text_util.hpp"

namespace fundus {

GridMode parse_grid_mode(const std::string& s) {
  if (s == "tile_count") return GridMode::TileCount;
  if (s == "tile_pixels") return GridMode::TilePixels;
  fail(ErrorCode::Config, "unknown CLAHE grid mode '" + s + "' (tile_count|tile_pixels)");
}

std::string to_string(GridMode mode) {
  return mode == GridMode::TileCount ? "tile_count" : "tile_pixels";
}

std::string ClaheParams::to_string() const {
  std::ostringstream os;
  os << tile_w << 'x' << tile_h << ':' << clip_limit;
  return os.str();
}

ClaheParams ClaheParams::parse(const std::string& text) {
  const auto colon = text.find(':');
  const auto x = text.find('x');
  require(colon != std::string::npos && x != std::string::npos && x < colon, ErrorCode::Config,
          "CLAHE parameters '" + text + "' must look like WxH:CLIP");
  ClaheParams p;
  try {
    p.tile_w = std::stoi(text.substr(0, x));
    p.tile_h = std::stoi(text.substr(x + 1, colon - x - 1));
    p.clip_limit = std::stod(text.substr(colon + 1));
  } catch (const std::exception&) {
    fail(ErrorCode::Config, "CLAHE parameters '" + text + "' are not numeric");
  }
  require(p.tile_w >= 1 && p.tile_h >= 1, ErrorCode::Config, "CLAHE grid must be >= 1");
  require(p.clip_limit >= 1.0, ErrorCode::Config, "CLAHE clip limit must be >= 1");
  return p;
}

std::vector<ClaheParams> parse_clahe_list(const std::string& text) {
  std::vector<ClaheParams> out;
  for (const auto& item : detail::split(text, ';')) {
    const auto t = detail::trim(item);
    if (!t.empty()) out.push_back(ClaheParams::parse(t));
  }
  return out;
}

std::string format_clahe_list(const std::vector<ClaheParams>& list) {
  std::string out;
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (i) out += ';';
    out += list[i].to_string();
  }
  return out;
}

std::vector<ClaheParams> default_segmentation_clahe() {
  return {{8, 8, 2.0}, {300, 300, 2.0}};
}

std::vector<ClaheParams> default_classification_clahe() {
  return {{8, 8, 2.0}, {8, 8, 10.0}, {100, 100, 2.0}, {100, 100, 100.0}, {300, 300, 2.0}, {500, 500, 2.0}};
}

std::vector<int> tile_bounds(int extent, int tiles) {
  std::vector<int> b(tiles + 1);
  for (int t = 0; t <= tiles; ++t)
    b[t] = static_cast<int>(static_cast<std::int64_t>(t) * extent / tiles);
  return b;
}

namespace {

using Lut = std::array<std::uint8_t, 256>;

// Histogram counts are held in fixed point (kUnit per pixel) so that the
// clip level clip_limit * npix / 256 and the uniform share excess / 256 are
// exact integers. Constant images therefore map identically in every tile
// regardless of tile size.
constexpr std::int64_t kUnit = std::int64_t{1} << 24;

std::int64_t clip_quanta(double clip_limit) {
  return std::llround(clip_limit * 256.0);
}

Lut tile_mapping(const cv::Mat& gray, int x0, int x1, int y0, int y1, double clip_limit) {
  std::array<std::int64_t, 256> hist{};
  for (int y = y0; y < y1; ++y) {
    const auto* row = gray.ptr<std::uint8_t>(y);
    for (int x = x0; x < x1; ++x) ++hist[row[x]];
  }
  const std::int64_t npix = static_cast<std::int64_t>(x1 - x0) * (y1 - y0);
  const std::int64_t limit = clip_quanta(clip_limit) * npix * 256;

  std::int64_t excess = 0;
  for (auto& h : hist) {
    h *= kUnit;
    if (h > limit) {
      excess += h - limit;
      h = limit;
    }
  }
  const std::int64_t share = excess / 256;

  Lut lut{};
  const std::int64_t total = npix * kUnit;
  std::int64_t cdf = 0;
  for (int i = 0; i < 256; ++i) {
    cdf += hist[i] + share;
    lut[i] = static_cast<std::uint8_t>(std::min<std::int64_t>(255, (510 * cdf + total) / (2 * total)));
  }
  return lut;
}

// Neighbouring tile pair and rational blend weight for every coordinate
// along one axis. Tile centers are kept doubled so they stay integral.
struct AxisBlend {
  std::vector<int> lo, hi;
  std::vector<std::int64_t> num, den;
};

AxisBlend axis_blend(const std::vector<int>& bounds, int extent) {
  const int tiles = static_cast<int>(bounds.size()) - 1;
  std::vector<int> center2(tiles);
  for (int t = 0; t < tiles; ++t) center2[t] = bounds[t] + bounds[t + 1] - 1;

  AxisBlend a;
  a.lo.resize(extent);
  a.hi.resize(extent);
  a.num.resize(extent);
  a.den.resize(extent);
  int t = 0;
  for (int p = 0; p < extent; ++p) {
    const int p2 = 2 * p;
    while (t + 1 < tiles && center2[t + 1] <= p2) ++t;
    if (p2 <= center2[0]) {
      a.lo[p] = a.hi[p] = 0;
      a.num[p] = 0;
      a.den[p] = 1;
    } else if (t == tiles - 1) {
      a.lo[p] = a.hi[p] = tiles - 1;
      a.num[p] = 0;
      a.den[p] = 1;
    } else {
      a.lo[p] = t;
      a.hi[p] = t + 1;
      a.num[p] = p2 - center2[t];
      a.den[p] = center2[t + 1] - center2[t];
    }
  }
  return a;
}

int resolve_tiles(int extent, int grid, GridMode mode) {
  if (mode == GridMode::TileCount) return grid;
  return (extent + grid - 1) / grid;
}

}  // namespace

cv::Mat clahe(const cv::Mat& gray, const ClaheParams& params, GridMode mode) {
  require(gray.type() == CV_8UC1, ErrorCode::Parameter, "CLAHE input must be 8-bit single channel");
  require(params.tile_w >= 1 && params.tile_h >= 1 && params.clip_limit >= 1.0,
          ErrorCode::Parameter, "invalid CLAHE parameters " + params.to_string());
  const int tiles_x = resolve_tiles(gray.cols, params.tile_w, mode);
  const int tiles_y = resolve_tiles(gray.rows, params.tile_h, mode);
  require(tiles_x <= gray.cols && tiles_y <= gray.rows, ErrorCode::Parameter,
          "CLAHE grid " + std::to_string(tiles_x) + "x" + std::to_string(tiles_y) +
              " exceeds image size " + std::to_string(gray.cols) + "x" + std::to_string(gray.rows));

  const auto bx = tile_bounds(gray.cols, tiles_x);
  const auto by = tile_bounds(gray.rows, tiles_y);
  std::vector<Lut> luts(static_cast<std::size_t>(tiles_x) * tiles_y);
  for (int ty = 0; ty < tiles_y; ++ty)
    for (int tx = 0; tx < tiles_x; ++tx)
      luts[ty * tiles_x + tx] = tile_mapping(gray, bx[tx], bx[tx + 1], by[ty], by[ty + 1], params.clip_limit);

  const AxisBlend ax = axis_blend(bx, gray.cols);
  const AxisBlend ay = axis_blend(by, gray.rows);

  cv::Mat out(gray.size(), CV_8UC1);
  for (int y = 0; y < gray.rows; ++y) {
    const auto* src = gray.ptr<std::uint8_t>(y);
    auto* dst = out.ptr<std::uint8_t>(y);
    const Lut* top = &luts[ay.lo[y] * tiles_x];
    const Lut* bottom = &luts[ay.hi[y] * tiles_x];
    const std::int64_t ny = ay.num[y];
    const std::int64_t dy = ay.den[y];
    for (int x = 0; x < gray.cols; ++x) {
      const int v = src[x];
      const std::int64_t nx = ax.num[x];
      const std::int64_t dx = ax.den[x];
      const std::int64_t upper = (dx - nx) * top[ax.lo[x]][v] + nx * top[ax.hi[x]][v];
      const std::int64_t lower = (dx - nx) * bottom[ax.lo[x]][v] + nx * bottom[ax.hi[x]][v];
      const std::int64_t num = (dy - ny) * upper + ny * lower;
      const std::int64_t den = dx * dy;
      dst[x] = static_cast<std::uint8_t>((2 * num + den) / (2 * den));
    }
  }
  return out;
}

cv::Mat clahe_rgb(const cv::Mat& rgb, const ClaheParams& params, GridMode mode) {
  require(rgb.type() == CV_8UC3, ErrorCode::Parameter, "CLAHE RGB input must be CV_8UC3");
  std::vector<cv::Mat> planes;
  cv::split(rgb, planes);
  for (auto& p : planes) p = clahe(p, params, mode);
  cv::Mat out;
  cv::merge(planes, out);
  return out;
}

}  // namespace fundus
