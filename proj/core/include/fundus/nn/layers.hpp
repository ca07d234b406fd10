#pragma once

#include <functional>
#include <utility>

#include "fundus/nn/module.hpp"

namespace fundus::nn {

class Conv2d : public Module {
 public:
  Conv2d(int in, int out, int kernel, int stride, int pad, bool bias, Rng& rng);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(ParamList& out, const std::string& prefix) override;
  int weight_layers() const override { return 1; }

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  int in_, out_, k_, stride_, pad_;
  bool has_bias_;
  Tensor weight_, weight_grad_, bias_, bias_grad_;
  Tensor input_;
};

/// Fractionally-strided convolution; weight layout [in, out, k, k].
class ConvTranspose2d : public Module {
 public:
  ConvTranspose2d(int in, int out, int kernel, int stride, int pad, int output_pad, Rng& rng);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(ParamList& out, const std::string& prefix) override;
  int weight_layers() const override { return 1; }

 private:
  int in_, out_, k_, stride_, pad_, output_pad_;
  Tensor weight_, weight_grad_, bias_, bias_grad_;
  Tensor input_;
  Shape out_shape_;
};

class BatchNorm2d : public Module {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(ParamList& out, const std::string& prefix) override;

 private:
  int c_;
  double momentum_, eps_;
  Tensor gamma_, gamma_grad_, beta_, beta_grad_;
  Tensor running_mean_, running_var_;
  Tensor xhat_;
  std::vector<float> inv_std_;
};

class ReLU : public Module {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor output_;
};

class MaxPool2d : public Module {
 public:
  MaxPool2d(int kernel, int stride, int pad = 0) : k_(kernel), stride_(stride), pad_(pad) {}

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  int k_, stride_, pad_;
  Shape in_shape_;
  std::vector<std::int32_t> argmax_;
};

class AvgPool2d : public Module {
 public:
  AvgPool2d(int kernel, int stride) : k_(kernel), stride_(stride) {}

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  int k_, stride_;
  Shape in_shape_;
};

/// Adaptive average pooling to 1x1, whatever the input size.
class GlobalAvgPool : public Module {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape in_shape_;
};

class Linear : public Module {
 public:
  Linear(int in, int out, Rng& rng);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(ParamList& out, const std::string& prefix) override;
  int weight_layers() const override { return 1; }

 private:
  int in_, out_;
  Tensor weight_, weight_grad_, bias_, bias_grad_;
  Tensor input_;
};

/// Named children applied in order.
class Sequential : public Module {
 public:
  Sequential() = default;

  Sequential& add(std::string name, ModulePtr m);
  template <typename M, typename... Args>
  M& emplace(std::string name, Args&&... args) {
    auto m = std::make_unique<M>(std::forward<Args>(args)...);
    M& ref = *m;
    add(std::move(name), std::move(m));
    return ref;
  }

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(ParamList& out, const std::string& prefix) override;
  void set_training(bool on) override;
  int weight_layers() const override;

  std::size_t size() const { return children_.size(); }
  Module& child(std::size_t i) { return *children_[i].second; }

 private:
  std::vector<std::pair<std::string, ModulePtr>> children_;
};

/// Densely connected block: layer i sees the concatenation of the block input
/// and all earlier layer outputs, and contributes `growth` channels.
class DenseBlock : public Module {
 public:
  using LayerFactory = std::function<ModulePtr(int in_channels, int growth, Rng& rng)>;

  /// keep_input: output is [input, new features]; otherwise only the new
  /// features are emitted.
  DenseBlock(int in_channels, int layers, int growth, bool keep_input, const LayerFactory& factory,
             Rng& rng, std::string layer_prefix = "layer");

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(ParamList& out, const std::string& prefix) override;
  void set_training(bool on) override;
  int weight_layers() const override;

  int out_channels() const;

 private:
  int in_, growth_;
  bool keep_input_;
  std::string layer_prefix_;
  std::vector<ModulePtr> layers_;
};

/// BN -> ReLU -> Conv3x3(growth).
ModulePtr make_dense_layer(int in_channels, int growth, Rng& rng);
/// BN -> ReLU -> Conv1x1(bn_size * growth) -> BN -> ReLU -> Conv3x3(growth).
ModulePtr make_bottleneck_dense_layer(int in_channels, int growth, int bn_size, Rng& rng);

Tensor softmax_channels(const Tensor& logits);

}  // namespace fundus::nn
