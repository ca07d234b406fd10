#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>
#include <opencv2/imgproc.hpp>

#include "fundus/error.hpp"
#include "fundus/postprocess.hpp"

namespace fundus {

double EllipseParams::area() const { return std::numbers::pi * a * b; }

EllipseParams normalized(EllipseParams e) {
  if (e.b > e.a) {
    std::swap(e.a, e.b);
    e.theta += std::numbers::pi / 2;
  }
  e.theta = std::fmod(e.theta, std::numbers::pi);
  if (e.theta < 0) e.theta += std::numbers::pi;
  if (e.theta >= std::numbers::pi) e.theta = 0;
  return e;
}

cv::Mat rasterize_ellipse(const EllipseParams& e, int height, int width) {
  cv::Mat out = cv::Mat::zeros(height, width, CV_8UC1);
  if (!(e.a > 0 && e.b > 0)) return out;
  const double c = std::cos(e.theta), s = std::sin(e.theta);
  const double r = std::max(e.a, e.b);
  const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - r)));
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil(e.cy + r)));
  const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - r)));
  const int x1 = std::min(width - 1, static_cast<int>(std::ceil(e.cx + r)));
  for (int y = y0; y <= y1; ++y) {
    auto* row = out.ptr<std::uint8_t>(y);
    const double dy = y - e.cy;
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - e.cx;
      const double u = (dx * c + dy * s) / e.a;
      const double v = (-dx * s + dy * c) / e.b;
      if (u * u + v * v <= 1.0) row[x] = 1;
    }
  }
  return out;
}

EllipseMode parse_ellipse_mode(const std::string& s) {
  if (s == "boundary_lsq") return EllipseMode::BoundaryLsq;
  if (s == "max_inscribed") return EllipseMode::MaxInscribed;
  fail(ErrorCode::Config, "unknown ellipse_mode '" + s + "' (boundary_lsq|max_inscribed)");
}

std::string to_string(EllipseMode m) { return m == EllipseMode::BoundaryLsq ? "boundary_lsq" : "max_inscribed"; }

cv::Mat largest_component(const cv::Mat& binary) {
  cv::Mat labels, stats, centroids;
  const int n = cv::connectedComponentsWithStats(binary != 0, labels, stats, centroids, 8, CV_32S);
  cv::Mat out = cv::Mat::zeros(binary.size(), CV_8UC1);
  if (n <= 1) return out;
  int best = 1;
  for (int i = 2; i < n; ++i)
    if (stats.at<int>(i, cv::CC_STAT_AREA) > stats.at<int>(best, cv::CC_STAT_AREA)) best = i;
  out.setTo(1, labels == best);
  return out;
}

cv::Mat fill_holes(const cv::Mat& binary) {
  cv::Mat fg = (binary != 0) / 255;
  cv::Mat padded;
  cv::copyMakeBorder(fg, padded, 1, 1, 1, 1, cv::BORDER_CONSTANT, 0);
  cv::floodFill(padded, cv::Point(0, 0), 2, nullptr, 0, 0, 4);
  // Anything the outside flood did not reach is either foreground or a hole.
  cv::Mat inner = padded(cv::Rect(1, 1, binary.cols, binary.rows)) != 2;
  return inner / 255;
}

cv::Mat disk_element(int radius) {
  const int r = std::max(0, radius);
  cv::Mat k = cv::Mat::zeros(2 * r + 1, 2 * r + 1, CV_8UC1);
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dx * dx + dy * dy <= r * r) k.at<std::uint8_t>(dy + r, dx + r) = 1;
  return k;
}

std::optional<std::array<double, 6>> fit_conic(std::span<const cv::Point2d> points) {
  if (points.size() < 5) return std::nullopt;
  const Eigen::Index n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd d1(n, 3), d2(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = points[i].x, y = points[i].y;
    d1.row(i) << x * x, x * y, y * y;
    d2.row(i) << x, y, 1.0;
  }
  const Eigen::Matrix3d s1 = d1.transpose() * d1;
  const Eigen::Matrix3d s2 = d1.transpose() * d2;
  const Eigen::Matrix3d s3 = d2.transpose() * d2;
  Eigen::FullPivLU<Eigen::Matrix3d> lu(s3);
  if (!lu.isInvertible()) return std::nullopt;
  const Eigen::Matrix3d t = -lu.inverse() * s2.transpose();
  const Eigen::Matrix3d m = s1 + s2 * t;
  Eigen::Matrix3d c1_inv;
  c1_inv << 0, 0, 0.5, 0, -1, 0, 0.5, 0, 0;
  Eigen::EigenSolver<Eigen::Matrix3d> es(c1_inv * m);
  if (es.info() != Eigen::Success) return std::nullopt;
  int pick = -1;
  double best = 0;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(es.eigenvalues()[k].imag()) > 1e-9 * (1 + std::abs(es.eigenvalues()[k].real()))) continue;
    const Eigen::Vector3d v = es.eigenvectors().col(k).real();
    const double cond = 4 * v[0] * v[2] - v[1] * v[1];
    if (cond > best) {
      best = cond;
      pick = k;
    }
  }
  if (pick < 0) return std::nullopt;
  Eigen::Vector3d a1 = es.eigenvectors().col(pick).real();
  a1 /= std::sqrt(best);
  const Eigen::Vector3d a2 = t * a1;
  return std::array<double, 6>{a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]};
}

std::optional<EllipseParams> conic_to_ellipse(const std::array<double, 6>& q) {
  const auto [A, B, C, D, E, F] = q;
  const double det = 4 * A * C - B * B;
  if (!(det > 0)) return std::nullopt;
  const double x0 = (B * E - 2 * C * D) / det;
  const double y0 = (B * D - 2 * A * E) / det;
  const double f0 = A * x0 * x0 + B * x0 * y0 + C * y0 * y0 + D * x0 + E * y0 + F;
  Eigen::Matrix2d quad;
  quad << A, B / 2, B / 2, C;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(quad);
  const double l0 = es.eigenvalues()[0], l1 = es.eigenvalues()[1];  // ascending
  const double a2 = -f0 / l0, b2 = -f0 / l1;
  if (!(a2 > 0 && b2 > 0) || !std::isfinite(a2) || !std::isfinite(b2)) return std::nullopt;
  const Eigen::Vector2d major = es.eigenvectors().col(0);
  EllipseParams e{x0, y0, std::sqrt(a2), std::sqrt(b2), std::atan2(major[1], major[0])};
  return normalized(e);
}

namespace {

EllipseParams bbox_ellipse(const cv::Rect& r) {
  return normalized({r.x + (r.width - 1) / 2.0, r.y + (r.height - 1) / 2.0, r.width / 2.0, r.height / 2.0, 0.0});
}

}  // namespace

EllipseFit fit_max_ellipse(const cv::Mat& binary, EllipseMode mode) {
  require(mode == EllipseMode::BoundaryLsq, ErrorCode::Config,
          "ellipse_mode 'max_inscribed' is reserved and not implemented");
  require(binary.type() == CV_8UC1, ErrorCode::Argument, "ellipse fit expects an 8-bit single-channel mask");
  const cv::Mat comp = fill_holes(largest_component(binary));
  const cv::Rect box = cv::boundingRect(comp);
  require(box.area() > 0, ErrorCode::NoDetection, "mask is empty, nothing to fit");

  std::vector<cv::Point2d> pts;
  int boundary_pixels = 0;
  static const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
  for (int y = box.y; y < box.y + box.height; ++y)
    for (int x = box.x; x < box.x + box.width; ++x) {
      if (!comp.at<std::uint8_t>(y, x)) continue;
      bool edge = false;
      for (int k = 0; k < 4; ++k) {
        const int nx = x + dx[k], ny = y + dy[k];
        const bool outside = nx < 0 || ny < 0 || nx >= comp.cols || ny >= comp.rows || !comp.at<std::uint8_t>(ny, nx);
        if (outside) {
          pts.emplace_back(x + 0.5 * dx[k], y + 0.5 * dy[k]);
          edge = true;
        }
      }
      boundary_pixels += edge;
    }

  EllipseFit out;
  out.boundary_points = boundary_pixels;
  if (boundary_pixels >= 5) {
    // Center and scale the samples so the scatter matrices stay well conditioned.
    double mx = 0, my = 0;
    for (const auto& p : pts) {
      mx += p.x;
      my += p.y;
    }
    mx /= static_cast<double>(pts.size());
    my /= static_cast<double>(pts.size());
    const double scale = std::max(box.width, box.height) / 2.0;
    std::vector<cv::Point2d> norm;
    norm.reserve(pts.size());
    for (const auto& p : pts) norm.emplace_back((p.x - mx) / scale, (p.y - my) / scale);
    if (const auto conic = fit_conic(norm)) {
      if (auto e = conic_to_ellipse(*conic)) {
        e->cx = mx + e->cx * scale;
        e->cy = my + e->cy * scale;
        e->a *= scale;
        e->b *= scale;
        const double limit = 2.0 * std::max(box.width, box.height);
        if (e->a <= limit && e->b > 0) {
          out.ellipse = *e;
          return out;
        }
      }
    }
  }
  out.ellipse = bbox_ellipse(box);
  out.fallback = true;
  return out;
}

}  // namespace fundus
