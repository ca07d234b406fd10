#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fundus/clahe.hpp"
#include "fundus/image.hpp"
#include "fundus/nn/tensor.hpp"

namespace fundus {

/// Center crop to the shorter side, then resize to out_size x out_size. The
/// returned image's geometry maps frame pixels back to the source.
FundusImage square_crop_resize(const FundusImage& img, int out_size);

/// Applies the same crop+resize as square_crop_resize to a label mask
/// (nearest neighbour), so masks stay aligned with their images.
LabelMask square_crop_resize(const LabelMask& mask, int out_size);

/// Pastes a frame-sized label mask back onto the source raster described by
/// `geometry` (nearest neighbour; outside the crop window is background).
LabelMask to_source_frame(const LabelMask& frame_mask, const CropGeometry& geometry);

struct CoordChannels {
  cv::Mat x;  // CV_32FC1, -1 at column 0 to +1 at column w-1
  cv::Mat y;  // CV_32FC1, -1 at row 0 to +1 at row h-1
};

CoordChannels coord_channels(int h, int w);

enum class ChannelSource { Rgb, Coordinate, Clahe };

/// Names one plane of a ChannelStack and the transform that produced it.
struct ChannelDescriptor {
  ChannelSource source = ChannelSource::Rgb;
  char component = 'R';  // R, G, B for intensities; X, Y for coordinates
  ClaheParams clahe{};   // meaningful for ChannelSource::Clahe

  std::string to_string() const;  // e.g. "R", "X", "CLAHE(8x8:2)-G"
  bool operator==(const ChannelDescriptor&) const = default;
};

/// Multi-channel float input: intensities in [0,1], coordinates in [-1,1].
class ChannelStack {
 public:
  ChannelStack() = default;
  ChannelStack(nn::Tensor data, std::vector<ChannelDescriptor> manifest);

  const nn::Tensor& data() const { return data_; }
  nn::Tensor& data() { return data_; }
  const std::vector<ChannelDescriptor>& manifest() const { return manifest_; }

  int channels() const { return data_.shape().c; }
  int height() const { return data_.shape().h; }
  int width() const { return data_.shape().w; }
  std::vector<std::string> manifest_names() const;

  /// Checks manifest length, channel value ranges and finiteness.
  void validate() const;

 private:
  nn::Tensor data_;  // 1 x C x H x W
  std::vector<ChannelDescriptor> manifest_;
};

enum class SegVariant { CoordsOnly, CoordsClahe };

SegVariant parse_seg_variant(const std::string& s);
int seg_variant_channels(SegVariant v);

/// R,G,B,X,Y (5 channels) or R,G,B,X,Y followed by each CLAHE variant's
/// R,G,B (11 channels with the default two variants).
ChannelStack build_seg_stack(const FundusImage& img, SegVariant variant,
                             const std::vector<ClaheParams>& clahe_params = default_segmentation_clahe(),
                             GridMode mode = GridMode::TileCount);

/// Original R,G,B followed by R,G,B of each of the six CLAHE variants (21).
ChannelStack build_cls_stack(const FundusImage& patch,
                             const std::vector<ClaheParams>& clahe_params = default_classification_clahe(),
                             GridMode mode = GridMode::TileCount);

struct AugmentParams {
  double rotation_range = 360.0;  // degrees, angle drawn from [0, range)
  double flip_probability = 0.5;
  std::uint64_t seed = 0;
};

/// Rotates every intensity channel (bilinear, zero fill) and the mask
/// (nearest neighbour) about the image center, optionally mirrors them
/// horizontally, then regenerates the coordinate channels.
void apply_geometric(ChannelStack& stack, LabelMask& mask, double angle_deg, bool flip);

struct AugmentDraw {
  double angle_deg = 0;
  bool flip = false;
};

AugmentDraw draw_augmentation(const AugmentParams& p, std::mt19937_64& rng);

std::pair<ChannelStack, LabelMask> augment(const ChannelStack& stack, const LabelMask& mask,
                                           const AugmentParams& p, std::mt19937_64& rng);

}  // namespace fundus
