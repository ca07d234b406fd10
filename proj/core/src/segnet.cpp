#include "fundus/segnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "fundus/error.hpp"
#include "fundus/metrics.hpp"
#include "text_util.hpp"

namespace fundus {

using nlohmann::json;

SegPreset parse_seg_preset(const std::string& s) {
  if (s == "paper-57") return SegPreset::Paper57;
  if (s == "tiny") return SegPreset::Tiny;
  fail(ErrorCode::Config, "unknown segmentation preset '" + s + "' (paper-57|tiny)");
}

std::string to_string(SegPreset p) { return p == SegPreset::Paper57 ? "paper-57" : "tiny"; }

SegNetConfig SegNetConfig::from_preset(SegPreset preset, int in_channels, std::uint64_t seed) {
  SegNetConfig c;
  c.preset = preset;
  c.in_channels = in_channels;
  c.seed = seed;
  if (preset == SegPreset::Paper57) {
    c.initial_filters = 48;
    c.growth = 12;
    c.block_layers = {4, 4, 4, 4, 4};
    c.bottleneck_layers = 5;
  } else {
    c.initial_filters = 16;
    c.growth = 8;
    c.block_layers = {2, 2, 2, 2};
    c.bottleneck_layers = 2;
  }
  c.validate();
  return c;
}

void SegNetConfig::validate() const {
  require(in_channels == 5 || in_channels == 11, ErrorCode::Config,
          "segmentation input must have 5 or 11 channels, got " + std::to_string(in_channels));
  require(num_classes == kSegClasses, ErrorCode::Config, "segmentation predicts exactly 3 classes");
  require(initial_filters > 0 && growth > 0, ErrorCode::Config, "filter counts must be positive");
  require(!block_layers.empty() && block_layers.size() <= 8, ErrorCode::Config,
          "channel schedule needs 1..8 levels");
  for (int l : block_layers) require(l > 0, ErrorCode::Config, "every level needs >= 1 dense layer");
  require(bottleneck_layers > 0, ErrorCode::Config, "bottleneck needs >= 1 dense layer");
}

// ---------------------------------------------------------------------------

LabelMask SegOutput::argmax() const {
  const int h = height(), w = width();
  LabelMask m(h, w);
  const std::size_t plane = probs.shape().plane();
  const float* p = probs.data();
  for (int y = 0; y < h; ++y) {
    auto* row = m.labels().ptr<std::uint8_t>(y);
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      int best = 0;
      for (int c = 1; c < kSegClasses; ++c)
        if (p[c * plane + i] > p[best * plane + i]) best = c;
      row[x] = static_cast<std::uint8_t>(best);
    }
  }
  return m;
}

double SegOutput::normalization_error() const {
  const std::size_t plane = probs.shape().plane();
  double worst = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    double s = 0;
    for (int c = 0; c < probs.shape().c; ++c) s += probs.data()[c * plane + i];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

// ---------------------------------------------------------------------------

SegNet::SegNet(SegNetConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
  cfg_.validate();
  const int g = cfg_.growth;
  stem_ = std::make_unique<nn::Conv2d>(cfg_.in_channels, cfg_.initial_filters, 3, 1, 1, true, rng_);
  int c = cfg_.initial_filters;
  for (int layers : cfg_.block_layers) {
    down_.push_back(std::make_unique<nn::DenseBlock>(c, layers, g, true, nn::make_dense_layer, rng_));
    c = down_.back()->out_channels();
    skip_channels_.push_back(c);
    auto td = std::make_unique<nn::Sequential>();
    td->emplace<nn::BatchNorm2d>("norm", c);
    td->emplace<nn::ReLU>("relu");
    td->emplace<nn::Conv2d>("conv", c, c, 1, 1, 0, true, rng_);
    td->emplace<nn::MaxPool2d>("pool", 2, 2);
    transition_down_.push_back(std::move(td));
  }
  bottleneck_ = std::make_unique<nn::DenseBlock>(c, cfg_.bottleneck_layers, g, false, nn::make_dense_layer, rng_);
  int fresh = bottleneck_->out_channels();
  const int levels = static_cast<int>(cfg_.block_layers.size());
  for (int lvl = levels - 1; lvl >= 0; --lvl) {
    transition_up_.push_back(std::make_unique<nn::ConvTranspose2d>(fresh, fresh, 3, 2, 1, 1, rng_));
    up_input_channels_.push_back(fresh);
    const int in = fresh + skip_channels_[lvl];
    const bool last = lvl == 0;
    up_.push_back(std::make_unique<nn::DenseBlock>(in, cfg_.block_layers[lvl], g, last, nn::make_dense_layer, rng_));
    fresh = up_.back()->out_channels();
  }
  head_ = std::make_unique<nn::Conv2d>(fresh, cfg_.num_classes, 1, 1, 0, true, rng_);
}

nn::Tensor SegNet::forward(const nn::Tensor& x) {
  const nn::Shape& s = x.shape();
  require(s.c == cfg_.in_channels, ErrorCode::Contract,
          "segmentation model expects " + std::to_string(cfg_.in_channels) + " input channels, got " +
              std::to_string(s.c));
  const int f = cfg_.downsample_factor();
  require(s.h % f == 0 && s.w % f == 0, ErrorCode::Contract,
          "input size " + std::to_string(s.h) + "x" + std::to_string(s.w) + " must be divisible by " +
              std::to_string(f));
  std::vector<nn::Tensor> skips;
  nn::Tensor h = stem_->forward(x);
  for (std::size_t i = 0; i < down_.size(); ++i) {
    h = down_[i]->forward(h);
    skips.push_back(h);
    h = transition_down_[i]->forward(h);
  }
  h = bottleneck_->forward(h);
  for (std::size_t j = 0; j < up_.size(); ++j) {
    const std::size_t lvl = down_.size() - 1 - j;
    nn::Tensor upsampled = transition_up_[j]->forward(h);
    const nn::Tensor* parts[2] = {&upsampled, &skips[lvl]};
    h = up_[j]->forward(nn::concat_channels(parts));
  }
  return head_->forward(h);
}

nn::Tensor SegNet::backward(const nn::Tensor& grad_logits) {
  nn::Tensor g = head_->backward(grad_logits);
  std::vector<nn::Tensor> skip_grads(down_.size());
  for (std::size_t j = up_.size(); j-- > 0;) {
    const std::size_t lvl = down_.size() - 1 - j;
    nn::Tensor gc = up_[j]->backward(g);
    const int up_c = up_input_channels_[j];
    skip_grads[lvl] = nn::slice_channels(gc, up_c, gc.shape().c - up_c);
    g = transition_up_[j]->backward(nn::slice_channels(gc, 0, up_c));
  }
  g = bottleneck_->backward(g);
  for (std::size_t i = down_.size(); i-- > 0;) {
    g = transition_down_[i]->backward(g);
    g.add(skip_grads[i]);
    g = down_[i]->backward(g);
  }
  return stem_->backward(g);
}

void SegNet::collect(nn::ParamList& out, const std::string& prefix) {
  const auto name = [&](const std::string& n) { return prefix.empty() ? n : prefix + "." + n; };
  stem_->collect(out, name("stem"));
  for (std::size_t i = 0; i < down_.size(); ++i) {
    down_[i]->collect(out, name("down" + std::to_string(i + 1)));
    transition_down_[i]->collect(out, name("td" + std::to_string(i + 1)));
  }
  bottleneck_->collect(out, name("bottleneck"));
  for (std::size_t j = 0; j < up_.size(); ++j) {
    transition_up_[j]->collect(out, name("tu" + std::to_string(j + 1)));
    up_[j]->collect(out, name("up" + std::to_string(j + 1)));
  }
  head_->collect(out, name("head"));
}

void SegNet::set_training(bool on) {
  training_ = on;
  stem_->set_training(on);
  for (auto& m : down_) m->set_training(on);
  for (auto& m : transition_down_) m->set_training(on);
  bottleneck_->set_training(on);
  for (auto& m : transition_up_) m->set_training(on);
  for (auto& m : up_) m->set_training(on);
  head_->set_training(on);
}

int SegNet::weight_layers() const {
  int n = stem_->weight_layers() + bottleneck_->weight_layers() + head_->weight_layers();
  for (const auto& m : down_) n += m->weight_layers();
  for (const auto& m : transition_down_) n += m->weight_layers();
  for (const auto& m : transition_up_) n += m->weight_layers();
  for (const auto& m : up_) n += m->weight_layers();
  return n;
}

SegOutput SegNet::predict(const ChannelStack& stack) {
  set_training(false);
  return SegOutput{nn::softmax_channels(forward(stack.data()))};
}

std::unique_ptr<SegNet> build_segnet(const SegNetConfig& cfg) { return std::make_unique<SegNet>(cfg); }

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json config_json(const SegNetConfig& c) {
  return json{{"kind", "segnet"},
              {"preset", to_string(c.preset)},
              {"in_channels", c.in_channels},
              {"num_classes", c.num_classes},
              {"initial_filters", c.initial_filters},
              {"growth", c.growth},
              {"block_layers", c.block_layers},
              {"bottleneck_layers", c.bottleneck_layers},
              {"seed", c.seed}};
}

}  // namespace

void save_segnet(const std::filesystem::path& path, const SegNetConfig& cfg,
                 const std::vector<nn::NamedTensor>& weights) {
  nn::write_container(path, nn::Container{config_json(cfg).dump(), weights});
}

void save_segnet(const std::filesystem::path& path, SegNet& model) {
  save_segnet(path, model.config(), nn::export_params(model));
}

std::unique_ptr<SegNet> load_segnet(const std::filesystem::path& path) {
  const auto c = nn::read_container(path);
  json h;
  try {
    h = json::parse(c.header);
  } catch (const json::exception& e) {
    fail(ErrorCode::Load, "checkpoint header of '" + path.string() + "' is not JSON: " + e.what());
  }
  require(h.value("kind", "") == "segnet", ErrorCode::Load, "'" + path.string() + "' is not a segmentation checkpoint");
  SegNetConfig cfg;
  try {
    cfg.preset = parse_seg_preset(h.at("preset").get<std::string>());
    cfg.in_channels = h.at("in_channels").get<int>();
    cfg.num_classes = h.at("num_classes").get<int>();
    cfg.initial_filters = h.at("initial_filters").get<int>();
    cfg.growth = h.at("growth").get<int>();
    cfg.block_layers = h.at("block_layers").get<std::vector<int>>();
    cfg.bottleneck_layers = h.at("bottleneck_layers").get<int>();
    cfg.seed = h.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::Load, "checkpoint header of '" + path.string() + "' is incomplete: " + e.what());
  }
  auto model = build_segnet(cfg);
  nn::import_params(*model, c);
  return model;
}

// ---------------------------------------------------------------------------
// Loss and weighting

std::array<double, kSegClasses> pixel_class_frequencies(std::span<const LabelMask> masks) {
  std::array<double, kSegClasses> counts{};
  double total = 0;
  for (const auto& m : masks) {
    for (int r = 0; r < m.height(); ++r) {
      const auto* row = m.labels().ptr<std::uint8_t>(r);
      for (int c = 0; c < m.width(); ++c) counts[row[c]] += 1;
    }
    total += static_cast<double>(m.height()) * m.width();
  }
  require(total > 0, ErrorCode::Argument, "no pixels to count");
  for (auto& v : counts) v /= total;
  return counts;
}

std::array<double, kSegClasses> median_freq_weights(const std::array<double, kSegClasses>& freqs) {
  static const char* names[kSegClasses] = {"background", "disc", "cup"};
  for (int c = 0; c < kSegClasses; ++c)
    require(freqs[c] > 0, ErrorCode::DivideByZero, std::string("class '") + names[c] + "' has zero frequency");
  auto sorted = freqs;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[kSegClasses / 2];
  std::array<double, kSegClasses> w{};
  for (int c = 0; c < kSegClasses; ++c) w[c] = median / freqs[c];
  return w;
}

double weighted_cross_entropy(const SegOutput& probs, const LabelMask& target, std::span<const double> weights) {
  require(probs.height() == target.height() && probs.width() == target.width(), ErrorCode::Contract,
          "probability map and target differ in size");
  const cv::Mat labels = target.labels().isContinuous() ? target.labels() : target.labels().clone();
  const std::span<const std::uint8_t> t(labels.ptr<std::uint8_t>(0), labels.total());
  const auto p = probs.probs.span();
  return nn::weighted_cross_entropy_probs<float>(p, 1, probs.probs.shape().c, probs.probs.shape().plane(), t, weights);
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::vector<std::uint8_t> flatten_labels(const LabelMask& m) {
  std::vector<std::uint8_t> out(m.labels().total());
  std::size_t i = 0;
  for (int r = 0; r < m.height(); ++r) {
    const auto* row = m.labels().ptr<std::uint8_t>(r);
    for (int c = 0; c < m.width(); ++c) out[i++] = row[c];
  }
  return out;
}

SegDice dice_pair(const LabelMask& pred, const LabelMask& truth) {
  return {dice(pred.disc_region(), truth.disc_region()), dice(pred.cup_region(), truth.cup_region())};
}

}  // namespace

SegDice evaluate_segnet(SegNet& model, std::span<const SegSample> samples) {
  SegDice acc;
  for (const auto& s : samples) {
    const auto d = dice_pair(model.predict(s.stack).argmax(), s.mask);
    acc.disc += d.disc;
    acc.cup += d.cup;
  }
  if (!samples.empty()) {
    acc.disc /= static_cast<double>(samples.size());
    acc.cup /= static_cast<double>(samples.size());
  }
  return acc;
}

SegTrainResult train_segnet(SegNet& model, std::span<const SegSample> train, std::span<const SegSample> val,
                            const SegTrainConfig& cfg, const SegEpochCallback& on_epoch) {
  require(!train.empty() && !val.empty(), ErrorCode::Argument,
          "segmentation training needs at least one training and one validation sample");
  require(cfg.batch_size >= 1 && cfg.epochs >= 1 && cfg.lr0 > 0, ErrorCode::Config,
          "batch size, epochs and learning rate must be positive");

  std::vector<LabelMask> train_masks;
  for (const auto& s : train) train_masks.push_back(s.mask);
  SegTrainResult result;
  result.class_weights = median_freq_weights(pixel_class_frequencies(train_masks));
  const std::span<const double> weights(result.class_weights);

  nn::Adam opt(nn::parameters(model), cfg.lr0);
  nn::PlateauScheduler plateau(nn::plateau_factor(cfg.decay), cfg.plateau_patience, cfg.plateau_threshold);
  nn::Rng rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  result.best_val_loss = std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    SegEpochLog row;
    row.epoch = epoch;
    row.lr = opt.lr();
    model.set_training(true);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      std::vector<nn::Tensor> inputs;
      std::vector<std::uint8_t> targets;
      for (std::size_t k = b; k < e; ++k) {
        const auto& s = train[order[k]];
        if (cfg.augment) {
          auto [stack, mask] = augment(s.stack, s.mask, cfg.augment_params, rng);
          inputs.push_back(stack.data());
          const auto t = flatten_labels(mask);
          targets.insert(targets.end(), t.begin(), t.end());
        } else {
          inputs.push_back(s.stack.data());
          const auto t = flatten_labels(s.mask);
          targets.insert(targets.end(), t.begin(), t.end());
        }
      }
      const nn::Tensor batch = nn::stack_batch(inputs);
      opt.zero_grad();
      const nn::Tensor logits = model.forward(batch);
      nn::Tensor grad(logits.shape());
      const float loss = nn::weighted_cross_entropy_logits<float>(
          logits.span(), logits.shape().n, logits.shape().c, logits.shape().plane(), targets, weights, grad.span());
      model.backward(grad);
      opt.step();
      loss_sum += static_cast<double>(loss) * static_cast<double>(e - b);
    }
    row.train_loss = loss_sum / static_cast<double>(order.size());

    double val_loss = 0;
    SegDice vd;
    for (const auto& s : val) {
      const SegOutput out = model.predict(s.stack);
      val_loss += weighted_cross_entropy(out, s.mask, weights);
      const auto d = dice_pair(out.argmax(), s.mask);
      vd.disc += d.disc;
      vd.cup += d.cup;
    }
    const double nv = static_cast<double>(val.size());
    row.val_loss = val_loss / nv;
    row.val_dice_disc = vd.disc / nv;
    row.val_dice_cup = vd.cup / nv;
    require(std::isfinite(row.val_loss) && std::isfinite(row.val_dice_disc) && std::isfinite(row.val_dice_cup),
            ErrorCode::Training,
            "epoch " + std::to_string(epoch) + ": validation loss/dice is not finite (loss=" +
                std::to_string(row.val_loss) + ", train loss=" + std::to_string(row.train_loss) + ")");

    if (row.val_loss < result.best_val_loss) {
      result.best_val_loss = row.val_loss;
      result.best_epoch = epoch;
      result.best_weights = nn::export_params(model);
    }
    plateau.observe(row.val_loss, opt);
    result.log.push_back(row);
    if (on_epoch && !on_epoch(row, model)) break;
  }
  return result;
}

void write_seg_log(const std::filesystem::path& path, const SegTrainResult& result, const std::string& provenance) {
  auto out = detail::open_output(path);
  out << "# " << provenance << '\n';
  out << "# class_weights=" << result.class_weights[0] << ';' << result.class_weights[1] << ';'
      << result.class_weights[2] << " best_epoch=" << result.best_epoch << '\n';
  out << "epoch,lr,train_loss,val_loss,val_dice_disc,val_dice_cup\n";
  out.precision(9);
  for (const auto& r : result.log)
    out << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_dice_disc << ','
        << r.val_dice_cup << '\n';
}

// ---------------------------------------------------------------------------
// Ensemble

SegOutput average_outputs(std::span<const SegOutput> outputs) {
  require(!outputs.empty(), ErrorCode::Contract, "ensemble of zero outputs");
  SegOutput mean{nn::Tensor(outputs[0].probs.shape())};
  for (const auto& o : outputs) {
    require(o.probs.shape() == mean.probs.shape(), ErrorCode::Contract, "ensemble members disagree in shape");
    mean.probs.add(o.probs);
  }
  const float inv = 1.0f / static_cast<float>(outputs.size());
  for (auto& v : mean.probs.span()) v *= inv;
  return mean;
}

SegOutput ensemble_segment(std::span<SegNet* const> models, const FundusImage& img,
                           const std::vector<ClaheParams>& clahe_params, GridMode mode) {
  require(!models.empty(), ErrorCode::Contract, "ensemble needs at least one model");
  std::vector<SegOutput> outs;
  for (SegNet* m : models) {
    const SegVariant v = m->config().in_channels == 5 ? SegVariant::CoordsOnly : SegVariant::CoordsClahe;
    const ChannelStack stack = build_seg_stack(img, v, clahe_params, mode);
    require(stack.channels() == m->config().in_channels, ErrorCode::Contract,
            "model expects " + std::to_string(m->config().in_channels) + " channels but the stack has " +
                std::to_string(stack.channels()));
    outs.push_back(m->predict(stack));
  }
  return average_outputs(outs);
}

void save_seg_output(const std::filesystem::path& path, const SegOutput& out, const std::string& id) {
  nn::write_container(path, nn::Container{json{{"kind", "seg_output"}, {"id", id}}.dump(), {{"probs", out.probs}}});
}

SegOutput load_seg_output(const std::filesystem::path& path) {
  const auto c = nn::read_container(path);
  const nn::Tensor* t = c.find("probs");
  require(t != nullptr, ErrorCode::Load, "'" + path.string() + "' holds no probability map");
  return SegOutput{*t};
}

}  // namespace fundus
