#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fundus/dataio.hpp"
#include "fundus/image.hpp"
#include "fundus/nn/checkpoint.hpp"
#include "fundus/nn/layers.hpp"
#include "fundus/postprocess.hpp"
#include "fundus/preprocess.hpp"

namespace fundus {

inline constexpr int kClsInputChannels = 21;
inline constexpr int kClsClasses = 2;  // 0 healthy, 1 glaucoma
inline constexpr int kTenCrops = 10;

enum class BackboneFamily { DenseNet201, ResNet18, Tiny };
enum class WeightsSource { RandomInit, ExternalFile };

BackboneFamily parse_backbone_family(const std::string& s);  // densenet201-like | resnet18-like | tiny
std::string to_string(BackboneFamily f);
WeightsSource parse_weights_source(const std::string& s);  // random-init | external-file
std::string to_string(WeightsSource w);

struct BackboneSpec {
  BackboneFamily family = BackboneFamily::Tiny;
  WeightsSource weights_source = WeightsSource::RandomInit;
  std::filesystem::path weights_path;  // backbone weights when external-file
  std::uint64_t seed = 0;
};

/// Residual block with two 3x3 convolutions and an optional 1x1 projection
/// on the shortcut.
class BasicBlock : public nn::Module {
 public:
  BasicBlock(int in, int out, int stride, nn::Rng& rng);
  nn::Tensor forward(const nn::Tensor& x) override;
  nn::Tensor backward(const nn::Tensor& grad_out) override;
  void collect(nn::ParamList& out, const std::string& prefix) override;
  void set_training(bool on) override;
  int weight_layers() const override;

 private:
  nn::Sequential main_;
  std::unique_ptr<nn::Sequential> downsample_;
  nn::ReLU relu_;
};

/// [3x3 adapter conv 21->3] -> backbone -> global average pool -> linear(2).
/// Parameter names: adapter.*, backbone.* (torchvision layout for the
/// densenet201-like and resnet18-like families), head.*.
class Classifier : public nn::Module {
 public:
  explicit Classifier(BackboneSpec spec);

  nn::Tensor forward(const nn::Tensor& x) override;  // N x 2 x 1 x 1 logits
  nn::Tensor backward(const nn::Tensor& grad_logits) override;
  void collect(nn::ParamList& out, const std::string& prefix) override;
  void set_training(bool on) override;
  int weight_layers() const override;

  const BackboneSpec& spec() const { return spec_; }
  int feature_channels() const { return features_; }

  /// Eval-mode adapter output (N x 3 x H x W).
  nn::Tensor adapter_output(const nn::Tensor& x);
  /// Eval-mode softmax posteriors, N x 2.
  std::vector<std::array<double, kClsClasses>> posteriors(const nn::Tensor& x);

 private:
  BackboneSpec spec_;
  nn::Rng rng_;
  std::unique_ptr<nn::Conv2d> adapter_;
  std::unique_ptr<nn::Sequential> backbone_;
  nn::GlobalAvgPool pool_;
  std::unique_ptr<nn::Linear> head_;
  int features_ = 0;
};

/// Builds the classifier; with external-file weights the backbone tensors are
/// loaded from `spec.weights_path` (adapter and head stay random).
std::unique_ptr<Classifier> build_classifier(const BackboneSpec& spec);

/// (name, shape) of every backbone tensor an external weight file must hold.
std::vector<std::pair<std::string, nn::Shape>> backbone_shape_manifest(BackboneFamily family);

void save_classifier(const std::filesystem::path& path, Classifier& model);
void save_classifier(const std::filesystem::path& path, const BackboneSpec& spec,
                     const std::vector<nn::NamedTensor>& weights);
std::unique_ptr<Classifier> load_classifier(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Patches and crops

struct Patch {
  FundusImage image;
  cv::Rect window;       // in the (possibly enlarged) source raster
  bool resized = false;  // source smaller than the patch and was enlarged first
};

/// size x size window centered on `center` (source coordinates), shifted to
/// stay inside the image.
Patch extract_patch(const FundusImage& img, cv::Point2d center, int size);
Patch extract_patch(const FundusImage& img, const FinalSegmentation& seg, int size);

/// Top-left, top-right, bottom-left, bottom-right, center, then the
/// horizontal mirror of each in the same order.
std::vector<ChannelStack> ten_crop(const ChannelStack& stack, int crop_size = 500);

ChannelStack crop_stack(const ChannelStack& stack, int x, int y, int size, bool hflip);

// ---------------------------------------------------------------------------
// Training

/// weight_c = 1 / freq_c. Throws DivideByZero on a zero frequency.
std::map<Diagnosis, double> inverse_freq_weights(const std::map<Diagnosis, double>& freqs);

struct ClsTrainConfig {
  int batch_size = 4;
  double lr0 = 1e-4;
  int step_epochs = 7;
  double gamma = 0.1;
  int epochs = 80;
  int crop_size = 500;
  std::uint64_t seed = 0;
};

struct ClsSample {
  std::string id;
  ChannelStack stack;  // 21 channels, patch-sized
  Diagnosis label = Diagnosis::Healthy;
};

struct ClsEpochLog {
  int epoch = 0;  // 1-based
  double lr = 0;
  double train_loss = 0;
  double train_accuracy = 0;  // eval mode, center crops
  double val_loss = 0;
  std::optional<double> val_auc;  // undefined when validation has one class
};

struct ClsTrainResult {
  std::vector<ClsEpochLog> log;
  std::map<Diagnosis, double> class_weights;
  int best_epoch = 0;
  std::string selection;  // "val_auc" or "val_loss"
  std::vector<nn::NamedTensor> best_weights;
};

using ClsEpochCallback = std::function<bool(const ClsEpochLog&, Classifier&)>;

/// Class-weighted cross-entropy with Adam and step decay; random crop and
/// horizontal flip per sample; keeps the weights with the best validation
/// AUC (validation loss when AUC is undefined).
ClsTrainResult train_classifier(Classifier& model, std::span<const ClsSample> train,
                                std::span<const ClsSample> val, const ClsTrainConfig& cfg,
                                const ClsEpochCallback& on_epoch = {});

/// Posterior of the glaucoma class for the center crop of each sample.
std::vector<double> center_crop_scores(Classifier& model, std::span<const ClsSample> samples, int crop_size);

void write_cls_log(const std::filesystem::path& path, const ClsTrainResult& result, const std::string& provenance);

// ---------------------------------------------------------------------------
// Screening

struct ScreenReport {
  std::string id;
  double risk = 0;
  double cdr = 0;
  std::vector<std::array<double, kTenCrops>> posteriors;  // [model][crop], glaucoma class
  cv::Point2d disc_center;                                // source coordinates
  bool patch_resized = false;
};

struct ScreenParams {
  int patch_size = 550;
  int crop_size = 500;
  std::vector<ClaheParams> clahe = default_classification_clahe();
  GridMode grid_mode = GridMode::TileCount;
};

/// Patch around the disc, 21-channel stack, ten crops through every model;
/// risk is the mean glaucoma posterior over all models and crops.
ScreenReport screen(std::span<Classifier* const> models, const FundusImage& img, const FinalSegmentation& seg,
                    const ScreenParams& p = {});

/// Ten-crop posteriors for an already built 21-channel patch stack.
ScreenReport screen_stack(std::span<Classifier* const> models, const ChannelStack& patch_stack, int crop_size);

double mean_risk(const std::vector<std::array<double, kTenCrops>>& posteriors);

/// Writes the three adapter output maps as min-max normalized 8-bit PNGs
/// (<stem>_act0.png ...). Constant maps are written as mid-gray.
std::vector<std::filesystem::path> dump_first_layer_activations(Classifier& model, const ChannelStack& stack,
                                                                const std::filesystem::path& out_dir,
                                                                const std::string& stem);

/// Min-max normalization to 8 bits; constant planes map to 128.
cv::Mat normalize_activation(const float* plane, int h, int w);

}  // namespace fundus
