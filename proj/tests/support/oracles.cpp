#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include <boost/rational.hpp>

namespace oracle {

namespace {

using Q = boost::rational<std::int64_t>;

struct Tile {
  int x0, x1, y0, y1;
};

Tile tile_at(const cv::Mat& g, int tx, int ty, int tiles_x, int tiles_y) {
  return {tx * g.cols / tiles_x, (tx + 1) * g.cols / tiles_x, ty * g.rows / tiles_y, (ty + 1) * g.rows / tiles_y};
}

// Value of the tile mapping at intensity v, rebuilt from the raw pixels.
int tile_map(const cv::Mat& g, const Tile& t, int v, double clip_limit) {
  std::array<std::int64_t, 256> count{};
  for (int y = t.y0; y < t.y1; ++y)
    for (int x = t.x0; x < t.x1; ++x) ++count[g.at<std::uint8_t>(y, x)];
  const std::int64_t npix = static_cast<std::int64_t>(t.x1 - t.x0) * (t.y1 - t.y0);
  const Q limit = Q(std::llround(clip_limit * 256), 256) * Q(npix, 256);
  Q excess = 0;
  for (auto c : count)
    if (Q(c) > limit) excess += Q(c) - limit;
  Q cdf = 0;
  for (int i = 0; i <= v; ++i) cdf += std::min(Q(count[i]), limit) + excess / 256;
  const Q m = Q(255) * cdf / npix + Q(1, 2);
  return static_cast<int>(std::min<std::int64_t>(255, m.numerator() / m.denominator()));
}

// Neighbouring tiles and blend weight along one axis for pixel p.
void bracket(int p, int extent, int tiles, int& lo, int& hi, Q& w) {
  auto center = [&](int t) { return Q(t * extent / tiles + (t + 1) * extent / tiles - 1, 2); };
  if (Q(p) <= center(0)) {
    lo = hi = 0;
    w = 0;
    return;
  }
  if (Q(p) >= center(tiles - 1)) {
    lo = hi = tiles - 1;
    w = 0;
    return;
  }
  int t = 0;
  while (!(center(t) <= Q(p) && Q(p) < center(t + 1))) ++t;
  lo = t;
  hi = t + 1;
  w = (Q(p) - center(t)) / (center(t + 1) - center(t));
}

}  // namespace

cv::Mat clahe(const cv::Mat& gray, int tiles_x, int tiles_y, double clip_limit) {
  cv::Mat out(gray.size(), CV_8UC1);
  for (int y = 0; y < gray.rows; ++y)
    for (int x = 0; x < gray.cols; ++x) {
      int xl, xh, yl, yh;
      Q wx, wy;
      bracket(x, gray.cols, tiles_x, xl, xh, wx);
      bracket(y, gray.rows, tiles_y, yl, yh, wy);
      const int v = gray.at<std::uint8_t>(y, x);
      auto m = [&](int tx, int ty) { return Q(tile_map(gray, tile_at(gray, tx, ty, tiles_x, tiles_y), v, clip_limit)); };
      const Q top = (Q(1) - wx) * m(xl, yl) + wx * m(xh, yl);
      const Q bottom = (Q(1) - wx) * m(xl, yh) + wx * m(xh, yh);
      const Q val = (Q(1) - wy) * top + wy * bottom + Q(1, 2);
      out.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(val.numerator() / val.denominator());
    }
  return out;
}

std::array<double, 256> clipped_histogram(const cv::Mat& tile, double clip_limit) {
  std::array<double, 256> h{};
  for (int y = 0; y < tile.rows; ++y)
    for (int x = 0; x < tile.cols; ++x) h[tile.at<std::uint8_t>(y, x)] += 1;
  const double limit = clip_limit * static_cast<double>(tile.total()) / 256.0;
  double excess = 0;
  for (auto& v : h)
    if (v > limit) {
      excess += v - limit;
      v = limit;
    }
  for (auto& v : h) v += excess / 256.0;
  return h;
}

double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0;
  long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[i] != 1 || labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  return wins / static_cast<double>(pairs);
}

SweepPoint sweep_sens_at_spec(const std::vector<double>& scores, const std::vector<int>& labels, double target) {
  std::vector<double> cuts = scores;
  cuts.push_back(std::numeric_limits<double>::infinity());
  SweepPoint best{-1, 0, 0};
  for (double t : cuts) {
    int tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool pos = scores[i] >= t;
      if (labels[i] == 1) (pos ? tp : fn)++;
      else (pos ? fp : tn)++;
    }
    const double sens = static_cast<double>(tp) / (tp + fn);
    const double spec = static_cast<double>(tn) / (tn + fp);
    if (spec < target) continue;
    if (sens > best.sensitivity || (sens == best.sensitivity && t < best.threshold)) best = {sens, spec, t};
  }
  return best;
}

cv::Mat median_blur(const cv::Mat& gray, int kernel) {
  const int r = kernel / 2;
  cv::Mat out(gray.size(), CV_8UC1);
  std::vector<int> win;
  for (int y = 0; y < gray.rows; ++y)
    for (int x = 0; x < gray.cols; ++x) {
      win.clear();
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = std::clamp(y + dy, 0, gray.rows - 1);
          const int xx = std::clamp(x + dx, 0, gray.cols - 1);
          win.push_back(gray.at<std::uint8_t>(yy, xx));
        }
      std::nth_element(win.begin(), win.begin() + win.size() / 2, win.end());
      out.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(win[win.size() / 2]);
    }
  return out;
}

namespace {

cv::Mat morph(const cv::Mat& b, int r, bool dilate) {
  cv::Mat out(b.size(), CV_8UC1);
  for (int y = 0; y < b.rows; ++y)
    for (int x = 0; x < b.cols; ++x) {
      bool acc = !dilate;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (dx * dx + dy * dy > r * r) continue;
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= b.rows || xx >= b.cols) continue;
          const bool v = b.at<std::uint8_t>(yy, xx) != 0;
          acc = dilate ? (acc || v) : (acc && v);
        }
      out.at<std::uint8_t>(y, x) = acc ? 1 : 0;
    }
  return out;
}

}  // namespace

cv::Mat dilate_disk(const cv::Mat& binary, int radius) { return morph(binary, radius, true); }
cv::Mat erode_disk(const cv::Mat& binary, int radius) { return morph(binary, radius, false); }

cv::Mat largest_component(const cv::Mat& binary) {
  cv::Mat label(binary.size(), CV_32S, cv::Scalar(0));
  int next = 0, best = 0;
  long best_size = 0;
  for (int y = 0; y < binary.rows; ++y)
    for (int x = 0; x < binary.cols; ++x) {
      if (!binary.at<std::uint8_t>(y, x) || label.at<int>(y, x)) continue;
      ++next;
      long size = 0;
      std::deque<cv::Point> q{{x, y}};
      label.at<int>(y, x) = next;
      while (!q.empty()) {
        const cv::Point p = q.front();
        q.pop_front();
        ++size;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = p.x + dx, yy = p.y + dy;
            if (xx < 0 || yy < 0 || xx >= binary.cols || yy >= binary.rows) continue;
            if (!binary.at<std::uint8_t>(yy, xx) || label.at<int>(yy, xx)) continue;
            label.at<int>(yy, xx) = next;
            q.push_back({xx, yy});
          }
      }
      if (size > best_size) {
        best_size = size;
        best = next;
      }
    }
  cv::Mat out(binary.size(), CV_8UC1, cv::Scalar(0));
  if (best) out.setTo(1, label == best);
  return out;
}

int percentile(const cv::Mat& gray, double p) {
  std::vector<int> v(gray.begin<std::uint8_t>(), gray.end<std::uint8_t>());
  std::sort(v.begin(), v.end());
  const long rank = std::max(1L, static_cast<long>(std::ceil(p / 100.0 * static_cast<double>(v.size()))));
  return v[rank - 1];
}

cv::Mat rough_mask(const cv::Mat& rgb, double median_fraction, double pct, double closing_fraction,
                   double dilation_fraction) {
  const int w = rgb.cols;
  int k = static_cast<int>(std::lround(median_fraction * w));
  if (k % 2 == 0) ++k;
  k = std::max(3, k);
  cv::Mat red(rgb.size(), CV_8UC1);
  for (int y = 0; y < rgb.rows; ++y)
    for (int x = 0; x < rgb.cols; ++x) red.at<std::uint8_t>(y, x) = rgb.at<cv::Vec3b>(y, x)[0];
  const cv::Mat smooth = median_blur(red, k);
  const int thr = percentile(smooth, pct);
  cv::Mat m(smooth.size(), CV_8UC1);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) m.at<std::uint8_t>(y, x) = smooth.at<std::uint8_t>(y, x) > thr ? 1 : 0;
  if (cv::countNonZero(m) == 0) return cv::Mat(rgb.size(), CV_8UC1, cv::Scalar(1));
  const int rc = std::max(1, static_cast<int>(std::lround(closing_fraction * w)));
  m = erode_disk(dilate_disk(m, rc), rc);
  m = largest_component(m);
  return dilate_disk(m, std::max(1, static_cast<int>(std::lround(dilation_fraction * w))));
}

cv::Mat ellipse_raster(int h, int w, double cx, double cy, double a, double b, double theta) {
  cv::Mat out(h, w, CV_8UC1, cv::Scalar(0));
  const double c = std::cos(theta), s = std::sin(theta);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double u = (dx * c + dy * s) / a, v = (-dx * s + dy * c) / b;
      if (u * u + v * v <= 1.0) out.at<std::uint8_t>(y, x) = 1;
    }
  return out;
}

std::array<double, 3> median_freq_weights(const std::vector<cv::Mat>& label_maps) {
  std::array<long, 3> n{};
  long total = 0;
  for (const auto& m : label_maps)
    for (int y = 0; y < m.rows; ++y)
      for (int x = 0; x < m.cols; ++x) {
        ++n[m.at<std::uint8_t>(y, x)];
        ++total;
      }
  std::array<double, 3> f{}, sorted{};
  for (int k = 0; k < 3; ++k) f[k] = static_cast<double>(n[k]) / static_cast<double>(total);
  sorted = f;
  std::sort(sorted.begin(), sorted.end());
  std::array<double, 3> w{};
  for (int k = 0; k < 3; ++k) w[k] = sorted[1] / f[k];
  return w;
}

long double weighted_ce(const std::vector<long double>& z, int n, int c, int p, const std::vector<int>& targets,
                        const std::vector<double>& weights) {
  long double loss = 0;
  for (int s = 0; s < n; ++s)
    for (int i = 0; i < p; ++i) {
      long double denom = 0;
      for (int k = 0; k < c; ++k) denom += std::exp(z[(s * c + k) * p + i]);
      const int t = targets[s * p + i];
      const long double prob = std::exp(z[(s * c + t) * p + i]) / denom;
      loss += weights[t] * -std::log(prob);
    }
  return loss / (n * p);
}

TempDir::TempDir(const std::string& tag) {
  std::random_device rd;
  path_ = std::filesystem::temp_directory_path() / ("fundus_" + tag + "_" + std::to_string(rd()));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace oracle
