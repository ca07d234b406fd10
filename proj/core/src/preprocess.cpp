#include "fundus/preprocess.hpp"

#include <cmath>

#include <opencv2/imgproc.hpp>

#include "fundus/error.hpp"

namespace fundus {

namespace {

struct SquareWindow {
  int x, y, side;
};

SquareWindow center_square(int width, int height) {
  const int side = std::min(width, height);
  return {(width - side) / 2, (height - side) / 2, side};
}

}  // namespace

FundusImage square_crop_resize(const FundusImage& img, int out_size) {
  require(out_size >= 32, ErrorCode::Argument, "output size must be >= 32");
  const auto win = center_square(img.width(), img.height());
  cv::Mat crop = img.pixels()(cv::Rect(win.x, win.y, win.side, win.side));
  cv::Mat out;
  if (win.side == out_size) {
    out = crop.clone();
  } else {
    const int interp = win.side > out_size ? cv::INTER_AREA : cv::INTER_LINEAR;
    cv::resize(crop, out, cv::Size(out_size, out_size), 0, 0, interp);
  }
  const CropGeometry step{img.width(), img.height(), win.x, win.y, win.side, win.side, out_size, out_size};
  return FundusImage(out, img.source_id(), img.geometry().then(step));
}

LabelMask square_crop_resize(const LabelMask& mask, int out_size) {
  require(out_size >= 32, ErrorCode::Argument, "output size must be >= 32");
  const auto win = center_square(mask.width(), mask.height());
  cv::Mat crop = mask.labels()(cv::Rect(win.x, win.y, win.side, win.side));
  cv::Mat out;
  if (win.side == out_size) {
    out = crop.clone();
  } else {
    cv::resize(crop, out, cv::Size(out_size, out_size), 0, 0, cv::INTER_NEAREST);
  }
  return LabelMask(out);
}

LabelMask to_source_frame(const LabelMask& frame_mask, const CropGeometry& g) {
  require(frame_mask.width() == g.width && frame_mask.height() == g.height, ErrorCode::Contract,
          "mask does not match the frame geometry");
  LabelMask out(g.source_height, g.source_width);
  cv::Mat window;
  cv::resize(frame_mask.labels(), window, cv::Size(g.crop_width, g.crop_height), 0, 0,
             cv::INTER_NEAREST);
  const cv::Rect dst(g.crop_x, g.crop_y, g.crop_width, g.crop_height);
  const cv::Rect clipped = dst & cv::Rect(0, 0, g.source_width, g.source_height);
  window(clipped - dst.tl()).copyTo(out.labels()(clipped));
  return out;
}

CoordChannels coord_channels(int h, int w) {
  require(h >= 2 && w >= 2, ErrorCode::Argument, "coordinate channels need h, w >= 2");
  CoordChannels cc{cv::Mat(h, w, CV_32FC1), cv::Mat(h, w, CV_32FC1)};
  for (int y = 0; y < h; ++y) {
    auto* xr = cc.x.ptr<float>(y);
    auto* yr = cc.y.ptr<float>(y);
    const float yv = static_cast<float>(-1.0 + 2.0 * y / (h - 1));
    for (int x = 0; x < w; ++x) {
      xr[x] = static_cast<float>(-1.0 + 2.0 * x / (w - 1));
      yr[x] = yv;
    }
  }
  return cc;
}

std::string ChannelDescriptor::to_string() const {
  switch (source) {
    case ChannelSource::Rgb:
    case ChannelSource::Coordinate: return std::string(1, component);
    case ChannelSource::Clahe: return "CLAHE(" + clahe.to_string() + ")-" + std::string(1, component);
  }
  return "?";
}

ChannelStack::ChannelStack(nn::Tensor data, std::vector<ChannelDescriptor> manifest)
    : data_(std::move(data)), manifest_(std::move(manifest)) {
  require(data_.shape().n == 1, ErrorCode::Contract, "channel stack holds a single sample");
  require(static_cast<int>(manifest_.size()) == data_.shape().c, ErrorCode::Contract,
          "channel manifest has " + std::to_string(manifest_.size()) + " entries for " +
              std::to_string(data_.shape().c) + " channels");
}

std::vector<std::string> ChannelStack::manifest_names() const {
  std::vector<std::string> out;
  for (const auto& d : manifest_) out.push_back(d.to_string());
  return out;
}

void ChannelStack::validate() const {
  require(static_cast<int>(manifest_.size()) == channels(), ErrorCode::Contract,
          "channel manifest length differs from channel count");
  for (int c = 0; c < channels(); ++c) {
    const bool coord = manifest_[c].source == ChannelSource::Coordinate;
    const float lo = coord ? -1.0f : 0.0f;
    const float* p = data_.channel(0, c);
    for (std::size_t i = 0; i < data_.shape().plane(); ++i) {
      require(std::isfinite(p[i]) && p[i] >= lo - 1e-6f && p[i] <= 1.0f + 1e-6f, ErrorCode::Contract,
              "channel " + manifest_[c].to_string() + " holds out-of-range value");
    }
  }
}

namespace {

class StackBuilder {
 public:
  StackBuilder(int h, int w) : h_(h), w_(w) {}

  void add_rgb(const cv::Mat& rgb, ChannelSource source, const ClaheParams& params = {}) {
    std::vector<cv::Mat> planes;
    cv::split(rgb, planes);
    const char names[3] = {'R', 'G', 'B'};
    for (int c = 0; c < 3; ++c) {
      cv::Mat f;
      planes[c].convertTo(f, CV_32F, 1.0 / 255.0);
      planes_.push_back(f);
      manifest_.push_back({source, names[c], params});
    }
  }

  void add_coords() {
    auto cc = coord_channels(h_, w_);
    planes_.push_back(cc.x);
    manifest_.push_back({ChannelSource::Coordinate, 'X', {}});
    planes_.push_back(cc.y);
    manifest_.push_back({ChannelSource::Coordinate, 'Y', {}});
  }

  ChannelStack build() {
    nn::Tensor t({1, static_cast<int>(planes_.size()), h_, w_});
    for (std::size_t c = 0; c < planes_.size(); ++c) {
      cv::Mat dst(h_, w_, CV_32FC1, t.channel(0, static_cast<int>(c)));
      planes_[c].copyTo(dst);
    }
    return ChannelStack(std::move(t), std::move(manifest_));
  }

 private:
  int h_, w_;
  std::vector<cv::Mat> planes_;
  std::vector<ChannelDescriptor> manifest_;
};

}  // namespace

SegVariant parse_seg_variant(const std::string& s) {
  if (s == "coords-only" || s == "5") return SegVariant::CoordsOnly;
  if (s == "coords+clahe" || s == "11") return SegVariant::CoordsClahe;
  fail(ErrorCode::Argument, "unknown segmentation variant '" + s + "' (coords-only|coords+clahe)");
}

int seg_variant_channels(SegVariant v) {
  return v == SegVariant::CoordsOnly ? 5 : 5 + 3 * static_cast<int>(default_segmentation_clahe().size());
}

ChannelStack build_seg_stack(const FundusImage& img, SegVariant variant,
                             const std::vector<ClaheParams>& clahe_params, GridMode mode) {
  StackBuilder b(img.height(), img.width());
  b.add_rgb(img.pixels(), ChannelSource::Rgb);
  b.add_coords();
  if (variant == SegVariant::CoordsClahe) {
    for (const auto& p : clahe_params) b.add_rgb(clahe_rgb(img.pixels(), p, mode), ChannelSource::Clahe, p);
  }
  return b.build();
}

ChannelStack build_cls_stack(const FundusImage& patch, const std::vector<ClaheParams>& clahe_params,
                             GridMode mode) {
  StackBuilder b(patch.height(), patch.width());
  b.add_rgb(patch.pixels(), ChannelSource::Rgb);
  for (const auto& p : clahe_params) b.add_rgb(clahe_rgb(patch.pixels(), p, mode), ChannelSource::Clahe, p);
  return b.build();
}

namespace {

// Rotation about the pixel-grid center; multiples of 180 degrees (and of 90
// on square rasters) are done by exact index permutation.
void rotate_plane(cv::Mat& plane, double angle_deg, int interp) {
  double a = std::fmod(angle_deg, 360.0);
  if (a < 0) a += 360.0;
  if (a == 0.0) return;
  cv::Mat out;
  if (a == 180.0) {
    cv::rotate(plane, out, cv::ROTATE_180);
  } else if (a == 90.0 && plane.rows == plane.cols) {
    cv::rotate(plane, out, cv::ROTATE_90_COUNTERCLOCKWISE);
  } else if (a == 270.0 && plane.rows == plane.cols) {
    cv::rotate(plane, out, cv::ROTATE_90_CLOCKWISE);
  } else {
    const cv::Point2f center((plane.cols - 1) / 2.0f, (plane.rows - 1) / 2.0f);
    const cv::Mat m = cv::getRotationMatrix2D(center, a, 1.0);
    cv::warpAffine(plane, out, m, plane.size(), interp, cv::BORDER_CONSTANT, cv::Scalar(0));
  }
  plane = out;
}

}  // namespace

void apply_geometric(ChannelStack& stack, LabelMask& mask, double angle_deg, bool flip) {
  const int h = stack.height();
  const int w = stack.width();
  require(mask.height() == h && mask.width() == w, ErrorCode::Contract,
          "stack and mask differ in size");
  for (int c = 0; c < stack.channels(); ++c) {
    if (stack.manifest()[c].source == ChannelSource::Coordinate) continue;
    cv::Mat plane(h, w, CV_32FC1, stack.data().channel(0, c));
    cv::Mat work = plane.clone();
    rotate_plane(work, angle_deg, cv::INTER_LINEAR);
    if (flip) cv::flip(work, work, 1);
    work.copyTo(plane);
  }
  cv::Mat labels = mask.labels().clone();
  rotate_plane(labels, angle_deg, cv::INTER_NEAREST);
  if (flip) cv::flip(labels, labels, 1);
  mask = LabelMask(labels);

  const auto cc = coord_channels(h, w);
  for (int c = 0; c < stack.channels(); ++c) {
    const auto& d = stack.manifest()[c];
    if (d.source != ChannelSource::Coordinate) continue;
    cv::Mat plane(h, w, CV_32FC1, stack.data().channel(0, c));
    (d.component == 'X' ? cc.x : cc.y).copyTo(plane);
  }
}

AugmentDraw draw_augmentation(const AugmentParams& p, std::mt19937_64& rng) {
  require(p.flip_probability >= 0.0 && p.flip_probability <= 1.0, ErrorCode::Argument,
          "flip probability must lie in [0,1]");
  AugmentDraw d;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double u_angle = uni(rng);
  const double u_flip = uni(rng);
  d.angle_deg = p.rotation_range > 0 ? u_angle * p.rotation_range : 0.0;
  d.flip = u_flip < p.flip_probability;
  return d;
}

std::pair<ChannelStack, LabelMask> augment(const ChannelStack& stack, const LabelMask& mask,
                                           const AugmentParams& p, std::mt19937_64& rng) {
  const auto d = draw_augmentation(p, rng);
  ChannelStack s = stack;
  LabelMask m(mask.labels().clone());
  apply_geometric(s, m, d.angle_deg, d.flip);
  return {std::move(s), std::move(m)};
}

}  // namespace fundus
