#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fundus/image.hpp"
#include "fundus/nn/checkpoint.hpp"
#include "fundus/nn/layers.hpp"
#include "fundus/nn/loss.hpp"
#include "fundus/nn/optim.hpp"
#include "fundus/preprocess.hpp"

namespace fundus {

inline constexpr int kSegClasses = 3;

enum class SegPreset { Paper57, Tiny };

SegPreset parse_seg_preset(const std::string& s);
std::string to_string(SegPreset p);

/// Dense encoder-decoder: a 3x3 stem, one dense block + transition-down per
/// level, a bottleneck dense block, then transposed-conv upsampling with
/// long skips from each encoder level into a decoder dense block, and a 1x1
/// classifier head.
struct SegNetConfig {
  SegPreset preset = SegPreset::Tiny;
  int in_channels = 5;
  int num_classes = kSegClasses;
  int initial_filters = 16;
  int growth = 8;
  std::vector<int> block_layers = {2, 2, 2, 2};  // dense layers per level
  int bottleneck_layers = 2;
  std::uint64_t seed = 0;  // weight initialisation

  /// paper-57: 48 stem filters, growth 12, five levels of 4 layers and a
  /// 5-layer bottleneck, giving 57 weight layers. tiny: CPU-sized.
  static SegNetConfig from_preset(SegPreset preset, int in_channels, std::uint64_t seed = 0);

  void validate() const;  // throws Config
  int downsample_factor() const { return 1 << block_layers.size(); }
};

/// Per-pixel class probabilities, 1 x 3 x H x W.
struct SegOutput {
  nn::Tensor probs;

  int height() const { return probs.shape().h; }
  int width() const { return probs.shape().w; }
  float prob(Label l, int y, int x) const { return probs.at(0, static_cast<int>(l), y, x); }

  LabelMask argmax() const;
  /// Max deviation of the per-pixel probability sum from 1.
  double normalization_error() const;
};

class SegNet : public nn::Module {
 public:
  explicit SegNet(SegNetConfig cfg);

  nn::Tensor forward(const nn::Tensor& x) override;  // logits N x 3 x H x W
  nn::Tensor backward(const nn::Tensor& grad_logits) override;
  void collect(nn::ParamList& out, const std::string& prefix) override;
  void set_training(bool on) override;
  int weight_layers() const override;

  const SegNetConfig& config() const { return cfg_; }

  /// Eval-mode softmax prediction for one channel stack.
  SegOutput predict(const ChannelStack& stack);

 private:
  SegNetConfig cfg_;
  nn::Rng rng_;
  std::unique_ptr<nn::Conv2d> stem_;
  std::vector<std::unique_ptr<nn::DenseBlock>> down_;
  std::vector<std::unique_ptr<nn::Sequential>> transition_down_;
  std::unique_ptr<nn::DenseBlock> bottleneck_;
  std::vector<std::unique_ptr<nn::ConvTranspose2d>> transition_up_;  // deepest first
  std::vector<std::unique_ptr<nn::DenseBlock>> up_;                  // deepest first
  std::unique_ptr<nn::Conv2d> head_;
  std::vector<int> skip_channels_;
  std::vector<int> up_input_channels_;  // channels coming out of each transition-up
};

std::unique_ptr<SegNet> build_segnet(const SegNetConfig& cfg);

void save_segnet(const std::filesystem::path& path, SegNet& model);
/// Saves a weight snapshot taken from a model of the same configuration.
void save_segnet(const std::filesystem::path& path, const SegNetConfig& cfg,
                 const std::vector<nn::NamedTensor>& weights);
std::unique_ptr<SegNet> load_segnet(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Loss and class weighting

/// Pixel frequency of each label over a set of masks.
std::array<double, kSegClasses> pixel_class_frequencies(std::span<const LabelMask> masks);

/// weight_c = median(freqs) / freq_c. Throws DivideByZero naming the class
/// when a frequency is zero.
std::array<double, kSegClasses> median_freq_weights(const std::array<double, kSegClasses>& freqs);

/// Mean over pixels of weight[target] * -log(max(p[target], 1e-7)).
double weighted_cross_entropy(const SegOutput& probs, const LabelMask& target,
                              std::span<const double> weights);

// ---------------------------------------------------------------------------
// Training

struct SegTrainConfig {
  int batch_size = 4;
  double lr0 = 1e-4;
  nn::PlateauDecay decay = nn::PlateauDecay::TenPercent;
  int plateau_patience = 3;
  double plateau_threshold = 1e-4;
  int epochs = 50;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentParams augment_params{};
};

struct SegSample {
  std::string id;
  ChannelStack stack;
  LabelMask mask;
};

struct SegEpochLog {
  int epoch = 0;  // 1-based
  double lr = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_dice_disc = 0;
  double val_dice_cup = 0;
};

struct SegTrainResult {
  std::vector<SegEpochLog> log;
  std::array<double, kSegClasses> class_weights{};
  int best_epoch = 0;
  double best_val_loss = 0;
  std::vector<nn::NamedTensor> best_weights;
};

/// Return false to stop after the current epoch.
using SegEpochCallback = std::function<bool(const SegEpochLog&, SegNet&)>;

SegTrainResult train_segnet(SegNet& model, std::span<const SegSample> train,
                            std::span<const SegSample> val, const SegTrainConfig& cfg,
                            const SegEpochCallback& on_epoch = {});

struct SegDice {
  double disc = 0;  // disc region (disc + cup labels)
  double cup = 0;
};

/// Mean per-image dice of argmax predictions, eval mode.
SegDice evaluate_segnet(SegNet& model, std::span<const SegSample> samples);

void write_seg_log(const std::filesystem::path& path, const SegTrainResult& result,
                   const std::string& provenance);

// ---------------------------------------------------------------------------
// Ensemble inference

/// Per-pixel arithmetic mean of probability maps of equal size.
SegOutput average_outputs(std::span<const SegOutput> outputs);

/// Builds each member's input stack from `img` according to its input
/// channel count (5: coords-only, 11: coords+CLAHE), predicts, and averages.
SegOutput ensemble_segment(std::span<SegNet* const> models, const FundusImage& img,
                           const std::vector<ClaheParams>& clahe_params = default_segmentation_clahe(),
                           GridMode mode = GridMode::TileCount);

void save_seg_output(const std::filesystem::path& path, const SegOutput& out, const std::string& id);
SegOutput load_seg_output(const std::filesystem::path& path);

}  // namespace fundus
