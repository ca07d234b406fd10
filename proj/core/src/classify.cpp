#include "fundus/classify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fundus/error.hpp"
#include "fundus/metrics.hpp"
#include "fundus/nn/loss.hpp"
#include "fundus/nn/optim.hpp"
#include "text_util.hpp"

namespace fundus {

using nlohmann::json;

BackboneFamily parse_backbone_family(const std::string& s) {
  if (s == "densenet201-like") return BackboneFamily::DenseNet201;
  if (s == "resnet18-like") return BackboneFamily::ResNet18;
  if (s == "tiny") return BackboneFamily::Tiny;
  fail(ErrorCode::Config, "unknown backbone family '" + s + "' (densenet201-like|resnet18-like|tiny)");
}

std::string to_string(BackboneFamily f) {
  switch (f) {
    case BackboneFamily::DenseNet201: return "densenet201-like";
    case BackboneFamily::ResNet18: return "resnet18-like";
    case BackboneFamily::Tiny: return "tiny";
  }
  return "?";
}

WeightsSource parse_weights_source(const std::string& s) {
  if (s == "random-init") return WeightsSource::RandomInit;
  if (s == "external-file") return WeightsSource::ExternalFile;
  fail(ErrorCode::Config, "unknown weights source '" + s + "' (random-init|external-file)");
}

std::string to_string(WeightsSource w) {
  return w == WeightsSource::RandomInit ? "random-init" : "external-file";
}

// ---------------------------------------------------------------------------

BasicBlock::BasicBlock(int in, int out, int stride, nn::Rng& rng) {
  main_.emplace<nn::Conv2d>("conv1", in, out, 3, stride, 1, false, rng);
  main_.emplace<nn::BatchNorm2d>("bn1", out);
  main_.emplace<nn::ReLU>("relu");
  main_.emplace<nn::Conv2d>("conv2", out, out, 3, 1, 1, false, rng);
  main_.emplace<nn::BatchNorm2d>("bn2", out);
  if (stride != 1 || in != out) {
    downsample_ = std::make_unique<nn::Sequential>();
    downsample_->emplace<nn::Conv2d>("0", in, out, 1, stride, 0, false, rng);
    downsample_->emplace<nn::BatchNorm2d>("1", out);
  }
}

nn::Tensor BasicBlock::forward(const nn::Tensor& x) {
  nn::Tensor y = main_.forward(x);
  y.add(downsample_ ? downsample_->forward(x) : x);
  return relu_.forward(y);
}

nn::Tensor BasicBlock::backward(const nn::Tensor& grad_out) {
  const nn::Tensor g = relu_.backward(grad_out);
  nn::Tensor gx = main_.backward(g);
  gx.add(downsample_ ? downsample_->backward(g) : g);
  return gx;
}

void BasicBlock::collect(nn::ParamList& out, const std::string& prefix) {
  main_.collect(out, prefix);
  if (downsample_) downsample_->collect(out, prefix.empty() ? "downsample" : prefix + ".downsample");
}

void BasicBlock::set_training(bool on) {
  training_ = on;
  main_.set_training(on);
  if (downsample_) downsample_->set_training(on);
  relu_.set_training(on);
}

int BasicBlock::weight_layers() const {
  return main_.weight_layers() + (downsample_ ? downsample_->weight_layers() : 0);
}

namespace {

std::unique_ptr<nn::Sequential> make_resnet18(nn::Rng& rng, int& features) {
  auto net = std::make_unique<nn::Sequential>();
  net->emplace<nn::Conv2d>("conv1", 3, 64, 7, 2, 3, false, rng);
  net->emplace<nn::BatchNorm2d>("bn1", 64);
  net->emplace<nn::ReLU>("relu");
  net->emplace<nn::MaxPool2d>("maxpool", 3, 2, 1);
  int c = 64;
  const int widths[4] = {64, 128, 256, 512};
  for (int i = 0; i < 4; ++i) {
    auto& layer = net->emplace<nn::Sequential>("layer" + std::to_string(i + 1));
    layer.emplace<BasicBlock>("0", c, widths[i], i == 0 ? 1 : 2, rng);
    layer.emplace<BasicBlock>("1", widths[i], widths[i], 1, rng);
    c = widths[i];
  }
  features = c;
  return net;
}

std::unique_ptr<nn::Sequential> make_densenet201(nn::Rng& rng, int& features) {
  constexpr int kGrowth = 32, kBnSize = 4;
  const int blocks[4] = {6, 12, 48, 32};
  auto net = std::make_unique<nn::Sequential>();
  auto& f = net->emplace<nn::Sequential>("features");
  f.emplace<nn::Conv2d>("conv0", 3, 64, 7, 2, 3, false, rng);
  f.emplace<nn::BatchNorm2d>("norm0", 64);
  f.emplace<nn::ReLU>("relu0");
  f.emplace<nn::MaxPool2d>("pool0", 3, 2, 1);
  const auto factory = [](int in, int growth, nn::Rng& r) {
    return nn::make_bottleneck_dense_layer(in, growth, kBnSize, r);
  };
  int c = 64;
  for (int i = 0; i < 4; ++i) {
    const std::string k = std::to_string(i + 1);
    auto& block = f.emplace<nn::DenseBlock>("denseblock" + k, c, blocks[i], kGrowth, true, factory, rng, "denselayer");
    c = block.out_channels();
    if (i < 3) {
      auto& t = f.emplace<nn::Sequential>("transition" + k);
      t.emplace<nn::BatchNorm2d>("norm", c);
      t.emplace<nn::ReLU>("relu");
      t.emplace<nn::Conv2d>("conv", c, c / 2, 1, 1, 0, false, rng);
      t.emplace<nn::AvgPool2d>("pool", 2, 2);
      c /= 2;
    }
  }
  f.emplace<nn::BatchNorm2d>("norm5", c);
  net->emplace<nn::ReLU>("relu");
  features = c;
  return net;
}

std::unique_ptr<nn::Sequential> make_tiny(nn::Rng& rng, int& features) {
  auto net = std::make_unique<nn::Sequential>();
  int c = 3;
  for (int i = 0; i < 3; ++i) {
    const int out = 16 << i;
    auto& b = net->emplace<nn::Sequential>("block" + std::to_string(i + 1));
    b.emplace<nn::Conv2d>("conv", c, out, 3, 2, 1, false, rng);
    b.emplace<nn::BatchNorm2d>("bn", out);
    b.emplace<nn::ReLU>("relu");
    c = out;
  }
  features = c;
  return net;
}

}  // namespace

Classifier::Classifier(BackboneSpec spec) : spec_(std::move(spec)), rng_(spec_.seed) {
  adapter_ = std::make_unique<nn::Conv2d>(kClsInputChannels, 3, 3, 1, 1, true, rng_);
  switch (spec_.family) {
    case BackboneFamily::DenseNet201: backbone_ = make_densenet201(rng_, features_); break;
    case BackboneFamily::ResNet18: backbone_ = make_resnet18(rng_, features_); break;
    case BackboneFamily::Tiny: backbone_ = make_tiny(rng_, features_); break;
  }
  head_ = std::make_unique<nn::Linear>(features_, kClsClasses, rng_);
}

nn::Tensor Classifier::forward(const nn::Tensor& x) {
  require(x.shape().c == kClsInputChannels, ErrorCode::Contract,
          "classifier expects 21 input channels, got " + std::to_string(x.shape().c));
  return head_->forward(pool_.forward(backbone_->forward(adapter_->forward(x))));
}

nn::Tensor Classifier::backward(const nn::Tensor& grad_logits) {
  return adapter_->backward(backbone_->backward(pool_.backward(head_->backward(grad_logits))));
}

void Classifier::collect(nn::ParamList& out, const std::string& prefix) {
  const auto name = [&](const std::string& n) { return prefix.empty() ? n : prefix + "." + n; };
  adapter_->collect(out, name("adapter"));
  backbone_->collect(out, name("backbone"));
  head_->collect(out, name("head"));
}

void Classifier::set_training(bool on) {
  training_ = on;
  adapter_->set_training(on);
  backbone_->set_training(on);
  pool_.set_training(on);
  head_->set_training(on);
}

int Classifier::weight_layers() const {
  return adapter_->weight_layers() + backbone_->weight_layers() + head_->weight_layers();
}

nn::Tensor Classifier::adapter_output(const nn::Tensor& x) {
  set_training(false);
  return adapter_->forward(x);
}

std::vector<std::array<double, kClsClasses>> Classifier::posteriors(const nn::Tensor& x) {
  set_training(false);
  const nn::Tensor logits = forward(x);
  std::vector<std::array<double, kClsClasses>> out(logits.shape().n);
  for (int n = 0; n < logits.shape().n; ++n) {
    const double z0 = logits.at(n, 0, 0, 0), z1 = logits.at(n, 1, 0, 0);
    const double m = std::max(z0, z1);
    const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
    out[n] = {e0 / (e0 + e1), e1 / (e0 + e1)};
  }
  return out;
}

std::unique_ptr<Classifier> build_classifier(const BackboneSpec& spec) {
  auto model = std::make_unique<Classifier>(spec);
  if (spec.weights_source == WeightsSource::ExternalFile) {
    require(!spec.weights_path.empty(), ErrorCode::Config, "external-file weights need a weights path");
    nn::import_params(*model, nn::read_container(spec.weights_path), "backbone");
  }
  return model;
}

std::vector<std::pair<std::string, nn::Shape>> backbone_shape_manifest(BackboneFamily family) {
  Classifier model({family, WeightsSource::RandomInit, {}, 0});
  return nn::shape_manifest(model, "backbone");
}

void save_classifier(const std::filesystem::path& path, const BackboneSpec& spec,
                     const std::vector<nn::NamedTensor>& weights) {
  const json header{{"kind", "classifier"},
                    {"family", to_string(spec.family)},
                    {"initial_weights", to_string(spec.weights_source)},
                    {"seed", spec.seed}};
  nn::write_container(path, nn::Container{header.dump(), weights});
}

void save_classifier(const std::filesystem::path& path, Classifier& model) {
  save_classifier(path, model.spec(), nn::export_params(model));
}

std::unique_ptr<Classifier> load_classifier(const std::filesystem::path& path) {
  const auto c = nn::read_container(path);
  BackboneSpec spec;
  try {
    const json h = json::parse(c.header);
    require(h.value("kind", "") == "classifier", ErrorCode::Load,
            "'" + path.string() + "' is not a classifier checkpoint");
    spec.family = parse_backbone_family(h.at("family").get<std::string>());
    spec.seed = h.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::Load, "checkpoint header of '" + path.string() + "' is invalid: " + e.what());
  }
  auto model = std::make_unique<Classifier>(spec);
  nn::import_params(*model, c);
  return model;
}

// ---------------------------------------------------------------------------

Patch extract_patch(const FundusImage& img, cv::Point2d center, int size) {
  require(size >= FundusImage::kMinSide, ErrorCode::Argument, "patch size must be at least 64");
  Patch out;
  cv::Mat src = img.pixels();
  CropGeometry geo = img.geometry();
  if (src.cols < size || src.rows < size) {
    const double s = static_cast<double>(size) / std::min(src.cols, src.rows);
    const int w = std::max(size, static_cast<int>(std::ceil(src.cols * s)));
    const int h = std::max(size, static_cast<int>(std::ceil(src.rows * s)));
    cv::Mat big;
    cv::resize(src, big, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
    CropGeometry up{src.cols, src.rows, 0, 0, src.cols, src.rows, w, h};
    center = up.to_frame(center);
    geo = geo.then(up);
    src = big;
    out.resized = true;
  }
  const int x0 = std::clamp(static_cast<int>(std::lround(center.x)) - size / 2, 0, src.cols - size);
  const int y0 = std::clamp(static_cast<int>(std::lround(center.y)) - size / 2, 0, src.rows - size);
  out.window = cv::Rect(x0, y0, size, size);
  const CropGeometry crop{src.cols, src.rows, x0, y0, size, size, size, size};
  out.image = FundusImage(src(out.window).clone(), img.source_id(), geo.then(crop));
  return out;
}

Patch extract_patch(const FundusImage& img, const FinalSegmentation& seg, int size) {
  return extract_patch(img, seg.disc_center_source(), size);
}

ChannelStack crop_stack(const ChannelStack& stack, int x, int y, int size, bool hflip) {
  require(x >= 0 && y >= 0 && x + size <= stack.width() && y + size <= stack.height(), ErrorCode::Argument,
          "crop window exceeds the stack");
  const int c = stack.channels();
  nn::Tensor out({1, c, size, size});
  for (int k = 0; k < c; ++k) {
    const float* src = stack.data().channel(0, k);
    float* dst = out.channel(0, k);
    for (int r = 0; r < size; ++r) {
      const float* s = src + static_cast<std::size_t>(y + r) * stack.width() + x;
      float* d = dst + static_cast<std::size_t>(r) * size;
      if (hflip)
        for (int col = 0; col < size; ++col) d[col] = s[size - 1 - col];
      else
        std::copy(s, s + size, d);
    }
  }
  return ChannelStack(std::move(out), stack.manifest());
}

std::vector<ChannelStack> ten_crop(const ChannelStack& stack, int crop_size) {
  require(crop_size >= 1 && stack.width() >= crop_size && stack.height() >= crop_size, ErrorCode::Argument,
          "ten-crop needs an input of at least " + std::to_string(crop_size) + "x" + std::to_string(crop_size) +
              ", got " + std::to_string(stack.width()) + "x" + std::to_string(stack.height()));
  const int dx = stack.width() - crop_size, dy = stack.height() - crop_size;
  const cv::Point corners[5] = {{0, 0}, {dx, 0}, {0, dy}, {dx, dy}, {dx / 2, dy / 2}};
  std::vector<ChannelStack> out;
  out.reserve(kTenCrops);
  for (bool flip : {false, true})
    for (const auto& p : corners) out.push_back(crop_stack(stack, p.x, p.y, crop_size, flip));
  return out;
}

// ---------------------------------------------------------------------------

std::map<Diagnosis, double> inverse_freq_weights(const std::map<Diagnosis, double>& freqs) {
  std::map<Diagnosis, double> w;
  for (const auto& [cls, f] : freqs) {
    require(f > 0, ErrorCode::DivideByZero, "class '" + to_string(cls) + "' has zero frequency");
    w[cls] = 1.0 / f;
  }
  return w;
}

namespace {

std::array<double, kClsClasses> weight_array(const std::map<Diagnosis, double>& w) {
  std::array<double, kClsClasses> out{};
  for (const auto& [cls, v] : w) out[static_cast<int>(cls)] = v;
  return out;
}

ChannelStack center_crop(const ChannelStack& s, int size) {
  return crop_stack(s, (s.width() - size) / 2, (s.height() - size) / 2, size, false);
}

double weighted_loss(const std::vector<std::array<double, kClsClasses>>& post, std::span<const ClsSample> samples,
                     const std::array<double, kClsClasses>& w) {
  double loss = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int t = static_cast<int>(samples[i].label);
    loss += w[t] * -std::log(std::max(post[i][t], nn::kLogFloor));
  }
  return loss / static_cast<double>(samples.size());
}

std::vector<std::array<double, kClsClasses>> center_posteriors(Classifier& model, std::span<const ClsSample> samples,
                                                               int crop_size) {
  std::vector<std::array<double, kClsClasses>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model.posteriors(center_crop(s.stack, crop_size).data())[0]);
  return out;
}

}  // namespace

std::vector<double> center_crop_scores(Classifier& model, std::span<const ClsSample> samples, int crop_size) {
  std::vector<double> out;
  for (const auto& p : center_posteriors(model, samples, crop_size)) out.push_back(p[1]);
  return out;
}

ClsTrainResult train_classifier(Classifier& model, std::span<const ClsSample> train, std::span<const ClsSample> val,
                                const ClsTrainConfig& cfg, const ClsEpochCallback& on_epoch) {
  require(!train.empty() && !val.empty(), ErrorCode::Argument,
          "classifier training needs at least one training and one validation sample");
  require(cfg.batch_size >= 1 && cfg.epochs >= 1 && cfg.lr0 > 0 && cfg.step_epochs >= 1 && cfg.gamma > 0,
          ErrorCode::Config, "classifier schedule values must be positive");
  for (const auto& s : train)
    require(s.stack.width() >= cfg.crop_size && s.stack.height() >= cfg.crop_size, ErrorCode::Argument,
            "patch of '" + s.id + "' is smaller than the training crop");

  std::map<Diagnosis, int> counts;
  for (const auto& s : train) ++counts[s.label];
  require(counts.size() == 2, ErrorCode::Training, "training split holds a single class");
  std::map<Diagnosis, double> freqs;
  for (const auto& [cls, n] : counts) freqs[cls] = static_cast<double>(n) / static_cast<double>(train.size());

  ClsTrainResult result;
  result.class_weights = inverse_freq_weights(freqs);
  const auto w = weight_array(result.class_weights);
  std::vector<int> val_labels;
  for (const auto& s : val) val_labels.push_back(static_cast<int>(s.label));
  const bool auc_defined = std::count(val_labels.begin(), val_labels.end(), 1) > 0 &&
                           std::count(val_labels.begin(), val_labels.end(), 0) > 0;
  result.selection = auc_defined ? "val_auc" : "val_loss";
  double best = auc_defined ? -1.0 : std::numeric_limits<double>::infinity();

  nn::Adam opt(nn::parameters(model), cfg.lr0);
  nn::Rng rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    ClsEpochLog row;
    row.epoch = epoch;
    row.lr = nn::step_decay_lr(cfg.lr0, cfg.gamma, cfg.step_epochs, epoch);
    opt.set_lr(row.lr);
    model.set_training(true);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      std::vector<nn::Tensor> inputs;
      std::vector<std::uint8_t> targets;
      for (std::size_t k = b; k < e; ++k) {
        const auto& s = train[order[k]];
        std::uniform_int_distribution<int> ux(0, s.stack.width() - cfg.crop_size);
        std::uniform_int_distribution<int> uy(0, s.stack.height() - cfg.crop_size);
        const int x = ux(rng), y = uy(rng);
        const bool flip = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5;
        inputs.push_back(crop_stack(s.stack, x, y, cfg.crop_size, flip).data());
        targets.push_back(static_cast<std::uint8_t>(s.label));
      }
      const nn::Tensor batch = nn::stack_batch(inputs);
      opt.zero_grad();
      const nn::Tensor logits = model.forward(batch);
      nn::Tensor grad(logits.shape());
      const float loss = nn::weighted_cross_entropy_logits<float>(logits.span(), logits.shape().n, kClsClasses, 1,
                                                                  targets, w, grad.span());
      model.backward(grad);
      opt.step();
      loss_sum += static_cast<double>(loss) * static_cast<double>(e - b);
    }
    row.train_loss = loss_sum / static_cast<double>(order.size());
    require(std::isfinite(row.train_loss), ErrorCode::Training,
            "epoch " + std::to_string(epoch) + ": training loss is not finite");

    const auto train_post = center_posteriors(model, train, cfg.crop_size);
    int correct = 0;
    for (std::size_t i = 0; i < train.size(); ++i)
      correct += (train_post[i][1] > train_post[i][0] ? 1 : 0) == static_cast<int>(train[i].label);
    row.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());

    const auto val_post = center_posteriors(model, val, cfg.crop_size);
    row.val_loss = weighted_loss(val_post, val, w);
    if (auc_defined) {
      std::vector<double> scores;
      for (const auto& p : val_post) scores.push_back(p[1]);
      row.val_auc = roc_auc(scores, val_labels);
    }
    const bool improved = auc_defined ? *row.val_auc > best : row.val_loss < best;
    if (improved) {
      best = auc_defined ? *row.val_auc : row.val_loss;
      result.best_epoch = epoch;
      result.best_weights = nn::export_params(model);
    }
    result.log.push_back(row);
    if (on_epoch && !on_epoch(row, model)) break;
  }
  return result;
}

void write_cls_log(const std::filesystem::path& path, const ClsTrainResult& result, const std::string& provenance) {
  auto out = detail::open_output(path);
  out << "# " << provenance << '\n';
  out << "# class_weights=" << result.class_weights.at(Diagnosis::Healthy) << ';'
      << result.class_weights.at(Diagnosis::Glaucoma) << " best_epoch=" << result.best_epoch
      << " selection=" << result.selection << '\n';
  out << "epoch,lr,train_loss,train_accuracy,val_loss,val_auc\n";
  out.precision(9);
  for (const auto& r : result.log) {
    out << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.train_accuracy << ',' << r.val_loss << ',';
    if (r.val_auc) out << *r.val_auc;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------

double mean_risk(const std::vector<std::array<double, kTenCrops>>& posteriors) {
  require(!posteriors.empty(), ErrorCode::Argument, "no posteriors to average");
  double sum = 0;
  for (const auto& row : posteriors)
    for (double p : row) sum += p;
  return sum / static_cast<double>(posteriors.size() * kTenCrops);
}

ScreenReport screen_stack(std::span<Classifier* const> models, const ChannelStack& patch_stack, int crop_size) {
  require(!models.empty(), ErrorCode::Contract, "screening needs at least one classifier");
  const auto crops = ten_crop(patch_stack, crop_size);
  ScreenReport r;
  for (Classifier* m : models) {
    std::array<double, kTenCrops> row{};
    for (int k = 0; k < kTenCrops; ++k) row[k] = m->posteriors(crops[k].data())[0][1];
    r.posteriors.push_back(row);
  }
  r.risk = mean_risk(r.posteriors);
  return r;
}

ScreenReport screen(std::span<Classifier* const> models, const FundusImage& img, const FinalSegmentation& seg,
                    const ScreenParams& p) {
  const Patch patch = extract_patch(img, seg, p.patch_size);
  ScreenReport r = screen_stack(models, build_cls_stack(patch.image, p.clahe, p.grid_mode), p.crop_size);
  r.id = img.source_id();
  r.cdr = seg.cdr;
  r.disc_center = seg.disc_center_source();
  r.patch_resized = patch.resized;
  return r;
}

cv::Mat normalize_activation(const float* plane, int h, int w) {
  const auto [lo_it, hi_it] = std::minmax_element(plane, plane + static_cast<std::size_t>(h) * w);
  const float lo = *lo_it, hi = *hi_it;
  cv::Mat out(h, w, CV_8UC1);
  const bool flat = !(hi - lo > 0);
  for (int y = 0; y < h; ++y) {
    auto* row = out.ptr<std::uint8_t>(y);
    for (int x = 0; x < w; ++x) {
      const float v = plane[static_cast<std::size_t>(y) * w + x];
      row[x] = flat ? 128 : static_cast<std::uint8_t>(std::lround(255.0 * (v - lo) / (hi - lo)));
    }
  }
  return out;
}

std::vector<std::filesystem::path> dump_first_layer_activations(Classifier& model, const ChannelStack& stack,
                                                                const std::filesystem::path& out_dir,
                                                                const std::string& stem) {
  const nn::Tensor act = model.adapter_output(stack.data());
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec, ErrorCode::Io, "cannot create '" + out_dir.string() + "': " + ec.message());
  std::vector<std::filesystem::path> files;
  for (int c = 0; c < act.shape().c; ++c) {
    const auto path = out_dir / (stem + "_act" + std::to_string(c) + ".png");
    const cv::Mat img = normalize_activation(act.channel(0, c), act.shape().h, act.shape().w);
    require(cv::imwrite(path.string(), img), ErrorCode::Io, "cannot write '" + path.string() + "'");
    files.push_back(path);
  }
  return files;
}

}  // namespace fundus
