#include "fundus/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "fundus/error.hpp"
#include "text_util.hpp"

namespace fundus {

namespace {

int odd_at_least_3(long v) {
  v = std::max(3L, v);
  return static_cast<int>(v % 2 == 0 ? v + 1 : v);
}

}  // namespace

int RoughMaskParams::median_kernel(int width) const { return odd_at_least_3(std::lround(width * median_fraction)); }
int RoughMaskParams::closing_radius(int width) const {
  return std::max(1, static_cast<int>(std::lround(width * closing_fraction)));
}
int RoughMaskParams::dilation_radius(int width) const {
  return std::max(1, static_cast<int>(std::lround(width * dilation_fraction)));
}

int percentile_value(const cv::Mat& gray, double percentile) {
  require(gray.type() == CV_8UC1 && !gray.empty(), ErrorCode::Argument, "percentile needs a non-empty 8-bit raster");
  require(percentile > 0 && percentile <= 100, ErrorCode::Argument, "percentile must lie in (0, 100]");
  std::array<long, 256> hist{};
  for (int r = 0; r < gray.rows; ++r) {
    const auto* row = gray.ptr<std::uint8_t>(r);
    for (int c = 0; c < gray.cols; ++c) ++hist[row[c]];
  }
  const long n = static_cast<long>(gray.total());
  const long rank = std::max(1L, static_cast<long>(std::ceil(percentile / 100.0 * static_cast<double>(n))));
  long seen = 0;
  for (int v = 0; v < 256; ++v) {
    seen += hist[v];
    if (seen >= rank) return v;
  }
  return 255;
}

RoughMask rough_disc_mask(const FundusImage& img, const RoughMaskParams& p) {
  require(p.percentile > 0 && p.percentile <= 100, ErrorCode::Config, "rough-mask percentile must lie in (0, 100]");
  require(p.median_fraction > 0 && p.closing_fraction >= 0 && p.dilation_fraction >= 0, ErrorCode::Config,
          "rough-mask fractions must be non-negative (median > 0)");
  const int w = img.width();
  cv::Mat red;
  cv::extractChannel(img.pixels(), red, 0);
  cv::Mat smooth;
  cv::medianBlur(red, smooth, p.median_kernel(w));
  const int thr = percentile_value(smooth, p.percentile);
  cv::Mat mask = (smooth > thr) / 255;

  RoughMask out;
  if (cv::countNonZero(mask) == 0) {
    out.mask = cv::Mat::ones(img.height(), img.width(), CV_8UC1);
    out.fallback = true;
    return out;
  }
  const cv::Mat close_k = disk_element(p.closing_radius(w));
  cv::dilate(mask, mask, close_k);
  cv::erode(mask, mask, close_k);
  if (p.keep_largest) mask = largest_component(mask);
  cv::dilate(mask, mask, disk_element(p.dilation_radius(w)));
  out.mask = mask;
  return out;
}

SegOutput suppress_false_positives(const SegOutput& probs, const cv::Mat& mask) {
  require(mask.type() == CV_8UC1 && mask.rows == probs.height() && mask.cols == probs.width(), ErrorCode::Contract,
          "suppression mask must be 8-bit and match the probability map");
  SegOutput out = probs;
  const int w = probs.width();
  float* bg = out.probs.channel(0, 0);
  float* disc = out.probs.channel(0, 1);
  float* cup = out.probs.channel(0, 2);
  for (int y = 0; y < probs.height(); ++y) {
    const auto* m = mask.ptr<std::uint8_t>(y);
    for (int x = 0; x < w; ++x) {
      if (m[x]) continue;
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      bg[i] += disc[i] + cup[i];
      disc[i] = 0;
      cup[i] = 0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

cv::Point2d FinalSegmentation::disc_center_source() const { return geometry.to_source({disc.cx, disc.cy}); }

int vertical_extent(const cv::Mat& binary) {
  int lo = -1, hi = -1;
  for (int y = 0; y < binary.rows; ++y)
    if (cv::countNonZero(binary.row(y)) > 0) {
      if (lo < 0) lo = y;
      hi = y;
    }
  return lo < 0 ? 0 : hi - lo + 1;
}

double vertical_cdr(const LabelMask& mask) {
  const int disc = vertical_extent(mask.disc_region());
  const int cup = vertical_extent(mask.cup_region());
  require(disc > 0, ErrorCode::CdrUndefined, "mask has no disc pixels");
  require(cup > 0, ErrorCode::CdrUndefined, "mask has no cup pixels");
  return static_cast<double>(cup) / disc;
}

namespace {

std::string describe(const EllipseParams& e) {
  std::ostringstream s;
  s.precision(4);
  s << "center (" << e.cx << ", " << e.cy << ") axes " << e.a << "x" << e.b;
  return s.str();
}

}  // namespace

FinalSegmentation fuse(const EllipseParams& disc, const EllipseParams& cup, int height, int width) {
  const cv::Mat d = rasterize_ellipse(disc, height, width);
  require(cv::countNonZero(d) > 0, ErrorCode::CdrUndefined,
          "disc ellipse (" + describe(disc) + ") covers no pixel of the " + std::to_string(width) + "x" +
              std::to_string(height) + " frame");
  const cv::Mat c = rasterize_ellipse(cup, height, width).mul(d);
  require(cv::countNonZero(c) > 0, ErrorCode::CdrUndefined,
          "cup ellipse (" + describe(cup) + ") lies entirely outside the disc (" + describe(disc) + ")");
  FinalSegmentation out;
  out.disc = disc;
  out.cup = cup;
  cv::Mat labels = d + c;  // 0 background, 1 disc, 2 cup
  out.mask = LabelMask(labels);
  out.cdr = static_cast<double>(vertical_extent(c)) / vertical_extent(d);
  out.geometry = CropGeometry::identity(width, height);
  require(cv::countNonZero(c > d) == 0, ErrorCode::Contract, "fused cup escaped the disc");
  return out;
}

PostprocessResult postprocess(const SegOutput& probs, const FundusImage& frame, const PostprocessParams& p) {
  require(frame.height() == probs.height() && frame.width() == probs.width(), ErrorCode::Contract,
          "probability map and image differ in size");
  PostprocessResult out;
  out.id = frame.source_id();
  const RoughMask rough = rough_disc_mask(frame, p.rough);
  out.rough_fallback = rough.fallback;
  const LabelMask labels = suppress_false_positives(probs, rough.mask).argmax();

  EllipseFit disc, cup;
  try {
    disc = fit_max_ellipse(labels.disc_region(), p.ellipse_mode);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoDetection) throw;
    fail(ErrorCode::NoDetection, "no optic disc detected");
  }
  try {
    cup = fit_max_ellipse(labels.cup_region(), p.ellipse_mode);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoDetection) throw;
    fail(ErrorCode::NoDetection, "no optic cup detected");
  }
  out.disc_fit_fallback = disc.fallback;
  out.cup_fit_fallback = cup.fallback;
  out.seg = fuse(disc.ellipse, cup.ellipse, frame.height(), frame.width());
  out.seg.geometry = frame.geometry();
  return out;
}

EllipseParams to_source(const EllipseParams& e, const CropGeometry& g) {
  const cv::Point2d c = g.to_source({e.cx, e.cy});
  const double s = std::sqrt(g.scale_x() * g.scale_y());
  return normalized({c.x, c.y, e.a * s, e.b * s, e.theta});
}

// ---------------------------------------------------------------------------

namespace {

const char* kResultsHeader =
    "id,status,disc_cx,disc_cy,disc_a,disc_b,disc_theta,cup_cx,cup_cy,cup_a,cup_b,cup_theta,cdr,"
    "rough_fallback,disc_fallback,cup_fallback";

std::string csv_escape(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

void write_results_table(const std::filesystem::path& path, std::span<const ResultRow> rows) {
  auto out = detail::open_output(path);
  out.precision(10);
  out << kResultsHeader << '\n';
  for (const auto& r : rows) {
    out << r.id << ',' << csv_escape(r.status);
    if (r.result) {
      const auto& s = r.result->seg;
      const EllipseParams d = to_source(s.disc, s.geometry), c = to_source(s.cup, s.geometry);
      for (const auto* e : {&d, &c}) out << ',' << e->cx << ',' << e->cy << ',' << e->a << ',' << e->b << ',' << e->theta;
      out << ',' << s.cdr << ',' << r.result->rough_fallback << ',' << r.result->disc_fit_fallback << ','
          << r.result->cup_fit_fallback;
    } else {
      out << ",,,,,,,,,,,,,,";
    }
    out << '\n';
  }
  require(out.good(), ErrorCode::Io, "failed writing '" + path.string() + "'");
}

std::vector<ResultRecord> read_results_table(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == kResultsHeader, ErrorCode::Format, "'" + path.string() + "' is not a postprocess results table");
  std::vector<ResultRecord> out;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(line, ',');
    require(f.size() == 16, ErrorCode::Format, "malformed results row in '" + path.string() + "'");
    ResultRecord r;
    r.id = f[0];
    r.status = f[1];
    if (r.status == "ok") {
      try {
        r.disc = {std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]), std::stod(f[6])};
        r.cup = {std::stod(f[7]), std::stod(f[8]), std::stod(f[9]), std::stod(f[10]), std::stod(f[11])};
        r.cdr = std::stod(f[12]);
      } catch (const std::exception&) {
        fail(ErrorCode::Format, "non-numeric field in results row '" + r.id + "'");
      }
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace fundus
