#include "fundus/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "fundus/error.hpp"
#include "gemm.hpp"

namespace fundus::nn {

using detail::cmap;
using detail::ConvGeom;
using detail::map;

ParamList parameters(Module& m, const std::string& prefix) {
  ParamList out;
  m.collect(out, prefix);
  return out;
}

std::size_t count_parameters(Module& m) {
  std::size_t n = 0;
  for (const auto& p : parameters(m))
    if (p.trainable()) n += p.value->numel();
  return n;
}

void zero_grad(Module& m) {
  for (auto& p : parameters(m))
    if (p.trainable()) p.grad->fill(0.0f);
}

namespace {

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

void kaiming_normal(Tensor& w, int fan_in, Rng& rng) {
  std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
  for (auto& v : w.span()) v = dist(rng);
}

void require_training(const Module& m, const char* name) {
  require(m.training(), ErrorCode::Contract, std::string(name) + ": backward called outside training mode");
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(int in, int out, int kernel, int stride, int pad, bool bias, Rng& rng)
    : in_(in), out_(out), k_(kernel), stride_(stride), pad_(pad), has_bias_(bias),
      weight_({out, in, kernel, kernel}), weight_grad_({out, in, kernel, kernel}) {
  require(in > 0 && out > 0 && kernel > 0 && stride > 0 && pad >= 0, ErrorCode::Config,
          "invalid convolution geometry");
  kaiming_normal(weight_, in * kernel * kernel, rng);
  if (has_bias_) {
    bias_ = Tensor({1, out, 1, 1});
    bias_grad_ = Tensor({1, out, 1, 1});
  }
}

Tensor Conv2d::forward(const Tensor& x) {
  const Shape& s = x.shape();
  require(s.c == in_, ErrorCode::Contract,
          "conv expects " + std::to_string(in_) + " channels, got " + std::to_string(s.c));
  const ConvGeom g{s.c, s.h, s.w, k_, stride_, pad_, detail::conv_out(s.h, k_, stride_, pad_),
                   detail::conv_out(s.w, k_, stride_, pad_)};
  require(g.oh > 0 && g.ow > 0, ErrorCode::Contract, "conv input " + s.to_string() + " too small");
  Tensor y({s.n, out_, g.oh, g.ow});
  const int K = g.rows();
  const int P = g.positions();
  const auto W = cmap(weight_.data(), out_, K, K);
  const bool direct = k_ == 1 && stride_ == 1 && pad_ == 0;
  const int chunk = detail::chunk_positions(g);
  std::vector<float> col(direct ? 0 : static_cast<std::size_t>(K) * chunk);

  for (int n = 0; n < s.n; ++n) {
    float* out = y.sample(n);
    if (direct) {
      map(out, out_, P, P).noalias() = W * cmap(x.sample(n), K, P, P);
    } else {
      for (int p0 = 0; p0 < P; p0 += chunk) {
        const int p1 = std::min(P, p0 + chunk);
        detail::im2col(x.sample(n), g, p0, p1, col.data());
        map(out + p0, out_, p1 - p0, P).noalias() = W * cmap(col.data(), K, p1 - p0, p1 - p0);
      }
    }
    if (has_bias_) {
      for (int o = 0; o < out_; ++o) {
        float* plane = out + static_cast<std::size_t>(o) * P;
        const float b = bias_.data()[o];
        for (int i = 0; i < P; ++i) plane[i] += b;
      }
    }
  }
  if (training_) input_ = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  require_training(*this, "conv2d");
  const Shape& s = input_.shape();
  const ConvGeom g{s.c, s.h, s.w, k_, stride_, pad_, dy.shape().h, dy.shape().w};
  const int K = g.rows();
  const int P = g.positions();
  Tensor dx(s);
  auto W = cmap(weight_.data(), out_, K, K);
  auto dW = map(weight_grad_.data(), out_, K, K);
  const bool direct = k_ == 1 && stride_ == 1 && pad_ == 0;
  const int chunk = detail::chunk_positions(g);
  std::vector<float> col(direct ? 0 : static_cast<std::size_t>(K) * chunk);
  std::vector<float> dcol(direct ? 0 : static_cast<std::size_t>(K) * chunk);

  for (int n = 0; n < s.n; ++n) {
    const float* g_out = dy.sample(n);
    if (direct) {
      dW.noalias() += cmap(g_out, out_, P, P) * cmap(input_.sample(n), K, P, P).transpose();
      map(dx.sample(n), K, P, P).noalias() = W.transpose() * cmap(g_out, out_, P, P);
    } else {
      for (int p0 = 0; p0 < P; p0 += chunk) {
        const int p1 = std::min(P, p0 + chunk);
        const int m = p1 - p0;
        detail::im2col(input_.sample(n), g, p0, p1, col.data());
        const auto go = cmap(g_out + p0, out_, m, P);
        dW.noalias() += go * cmap(col.data(), K, m, m).transpose();
        map(dcol.data(), K, m, m).noalias() = W.transpose() * go;
        detail::col2im(dcol.data(), g, p0, p1, dx.sample(n));
      }
    }
    if (has_bias_) {
      for (int o = 0; o < out_; ++o) {
        const float* plane = g_out + static_cast<std::size_t>(o) * P;
        double acc = 0;
        for (int i = 0; i < P; ++i) acc += plane[i];
        bias_grad_.data()[o] += static_cast<float>(acc);
      }
    }
  }
  return dx;
}

void Conv2d::collect(ParamList& out, const std::string& prefix) {
  out.push_back({join(prefix, "weight"), &weight_, &weight_grad_});
  if (has_bias_) out.push_back({join(prefix, "bias"), &bias_, &bias_grad_});
}

// ---------------------------------------------------------------------------
// ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int in, int out, int kernel, int stride, int pad, int output_pad,
                                 Rng& rng)
    : in_(in), out_(out), k_(kernel), stride_(stride), pad_(pad), output_pad_(output_pad),
      weight_({in, out, kernel, kernel}), weight_grad_({in, out, kernel, kernel}),
      bias_({1, out, 1, 1}), bias_grad_({1, out, 1, 1}) {
  require(in > 0 && out > 0 && kernel > 0 && stride > 0 && pad >= 0 && output_pad >= 0,
          ErrorCode::Config, "invalid transposed convolution geometry");
  kaiming_normal(weight_, in * kernel * kernel, rng);
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
  const Shape& s = x.shape();
  require(s.c == in_, ErrorCode::Contract,
          "transposed conv expects " + std::to_string(in_) + " channels, got " + std::to_string(s.c));
  const int oh = (s.h - 1) * stride_ - 2 * pad_ + k_ + output_pad_;
  const int ow = (s.w - 1) * stride_ - 2 * pad_ + k_ + output_pad_;
  // Seen from the output side this is an ordinary convolution whose output
  // grid is the input grid.
  const ConvGeom g{out_, oh, ow, k_, stride_, pad_, s.h, s.w};
  Tensor y({s.n, out_, oh, ow});
  const int K = g.rows();
  const int P = g.positions();
  const auto Wt = cmap(weight_.data(), in_, K, K);
  const int chunk = detail::chunk_positions(g);
  std::vector<float> col(static_cast<std::size_t>(K) * chunk);
  for (int n = 0; n < s.n; ++n) {
    for (int p0 = 0; p0 < P; p0 += chunk) {
      const int p1 = std::min(P, p0 + chunk);
      const int m = p1 - p0;
      map(col.data(), K, m, m).noalias() = Wt.transpose() * cmap(x.sample(n) + p0, in_, m, P);
      detail::col2im(col.data(), g, p0, p1, y.sample(n));
    }
    for (int o = 0; o < out_; ++o) {
      float* plane = y.channel(n, o);
      const float b = bias_.data()[o];
      for (std::size_t i = 0; i < y.shape().plane(); ++i) plane[i] += b;
    }
  }
  if (training_) input_ = x;
  out_shape_ = y.shape();
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& dy) {
  require_training(*this, "conv_transpose2d");
  const Shape& s = input_.shape();
  const ConvGeom g{out_, dy.shape().h, dy.shape().w, k_, stride_, pad_, s.h, s.w};
  const int K = g.rows();
  const int P = g.positions();
  Tensor dx(s);
  const auto Wt = cmap(weight_.data(), in_, K, K);
  auto dWt = map(weight_grad_.data(), in_, K, K);
  const int chunk = detail::chunk_positions(g);
  std::vector<float> col(static_cast<std::size_t>(K) * chunk);
  for (int n = 0; n < s.n; ++n) {
    for (int p0 = 0; p0 < P; p0 += chunk) {
      const int p1 = std::min(P, p0 + chunk);
      const int m = p1 - p0;
      detail::im2col(dy.sample(n), g, p0, p1, col.data());
      const auto c = cmap(col.data(), K, m, m);
      map(dx.sample(n) + p0, in_, m, P).noalias() = Wt * c;
      dWt.noalias() += cmap(input_.sample(n) + p0, in_, m, P) * c.transpose();
    }
    for (int o = 0; o < out_; ++o) {
      const float* plane = dy.channel(n, o);
      double acc = 0;
      for (std::size_t i = 0; i < dy.shape().plane(); ++i) acc += plane[i];
      bias_grad_.data()[o] += static_cast<float>(acc);
    }
  }
  return dx;
}

void ConvTranspose2d::collect(ParamList& out, const std::string& prefix) {
  out.push_back({join(prefix, "weight"), &weight_, &weight_grad_});
  out.push_back({join(prefix, "bias"), &bias_, &bias_grad_});
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, double momentum, double eps)
    : c_(channels), momentum_(momentum), eps_(eps), gamma_({1, channels, 1, 1}, 1.0f),
      gamma_grad_({1, channels, 1, 1}), beta_({1, channels, 1, 1}), beta_grad_({1, channels, 1, 1}),
      running_mean_({1, channels, 1, 1}), running_var_({1, channels, 1, 1}, 1.0f) {}

Tensor BatchNorm2d::forward(const Tensor& x) {
  const Shape& s = x.shape();
  require(s.c == c_, ErrorCode::Contract,
          "batchnorm expects " + std::to_string(c_) + " channels, got " + std::to_string(s.c));
  Tensor y(s);
  const std::size_t plane = s.plane();
  if (!training_) {
    for (int c = 0; c < c_; ++c) {
      const float inv = static_cast<float>(1.0 / std::sqrt(running_var_.data()[c] + eps_));
      const float scale = gamma_.data()[c] * inv;
      const float shift = beta_.data()[c] - running_mean_.data()[c] * scale;
      for (int n = 0; n < s.n; ++n) {
        const float* in = x.channel(n, c);
        float* out = y.channel(n, c);
        for (std::size_t i = 0; i < plane; ++i) out[i] = in[i] * scale + shift;
      }
    }
    return y;
  }

  const double count = static_cast<double>(s.n) * plane;
  xhat_ = Tensor(s);
  inv_std_.assign(c_, 0.0f);
  for (int c = 0; c < c_; ++c) {
    double sum = 0;
    for (int n = 0; n < s.n; ++n) {
      const float* in = x.channel(n, c);
      for (std::size_t i = 0; i < plane; ++i) sum += in[i];
    }
    const double mean = sum / count;
    double sq = 0;
    for (int n = 0; n < s.n; ++n) {
      const float* in = x.channel(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = in[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / count;
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = static_cast<float>(inv);
    const float g = gamma_.data()[c];
    const float b = beta_.data()[c];
    for (int n = 0; n < s.n; ++n) {
      const float* in = x.channel(n, c);
      float* xh = xhat_.channel(n, c);
      float* out = y.channel(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = static_cast<float>((in[i] - mean) * inv);
        out[i] = g * xh[i] + b;
      }
    }
    running_mean_.data()[c] = static_cast<float>((1 - momentum_) * running_mean_.data()[c] + momentum_ * mean);
    if (count > 1) {
      const double unbiased = var * count / (count - 1);
      running_var_.data()[c] = static_cast<float>((1 - momentum_) * running_var_.data()[c] + momentum_ * unbiased);
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  require_training(*this, "batchnorm2d");
  const Shape& s = dy.shape();
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * plane;
  Tensor dx(s);
  for (int c = 0; c < c_; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < s.n; ++n) {
      const float* g = dy.channel(n, c);
      const float* xh = xhat_.channel(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += g[i];
        sum_dy_xhat += g[i] * xh[i];
      }
    }
    gamma_grad_.data()[c] += static_cast<float>(sum_dy_xhat);
    beta_grad_.data()[c] += static_cast<float>(sum_dy);
    const double k = gamma_.data()[c] * inv_std_[c] / count;
    for (int n = 0; n < s.n; ++n) {
      const float* g = dy.channel(n, c);
      const float* xh = xhat_.channel(n, c);
      float* out = dx.channel(n, c);
      for (std::size_t i = 0; i < plane; ++i)
        out[i] = static_cast<float>(k * (count * g[i] - sum_dy - xh[i] * sum_dy_xhat));
    }
  }
  return dx;
}

void BatchNorm2d::collect(ParamList& out, const std::string& prefix) {
  out.push_back({join(prefix, "weight"), &gamma_, &gamma_grad_});
  out.push_back({join(prefix, "bias"), &beta_, &beta_grad_});
  out.push_back({join(prefix, "running_mean"), &running_mean_, nullptr});
  out.push_back({join(prefix, "running_var"), &running_var_, nullptr});
}

// ---------------------------------------------------------------------------
// Activations and pooling

Tensor ReLU::forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.span()) v = v > 0.0f ? v : 0.0f;
  if (training_) output_ = y;
  return y;
}

Tensor ReLU::backward(const Tensor& dy) {
  require_training(*this, "relu");
  Tensor dx = dy;
  const float* out = output_.data();
  float* d = dx.data();
  for (std::size_t i = 0; i < dx.numel(); ++i)
    if (out[i] <= 0.0f) d[i] = 0.0f;
  return dx;
}

Tensor MaxPool2d::forward(const Tensor& x) {
  const Shape& s = x.shape();
  const int oh = detail::conv_out(s.h, k_, stride_, pad_);
  const int ow = detail::conv_out(s.w, k_, stride_, pad_);
  require(oh > 0 && ow > 0, ErrorCode::Contract, "max-pool input " + s.to_string() + " too small");
  Tensor y({s.n, s.c, oh, ow});
  if (training_) argmax_.assign(y.numel(), -1);
  std::size_t o = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const float* in = x.channel(n, c);
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++o) {
          float best = -std::numeric_limits<float>::infinity();
          int arg = -1;
          for (int ky = 0; ky < k_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= s.h) continue;
            for (int kx = 0; kx < k_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= s.w) continue;
              const float v = in[iy * s.w + ix];
              if (v > best) {
                best = v;
                arg = iy * s.w + ix;
              }
            }
          }
          y.data()[o] = best;
          if (training_) argmax_[o] = arg;
        }
      }
    }
  }
  in_shape_ = s;
  return y;
}

Tensor MaxPool2d::backward(const Tensor& dy) {
  require_training(*this, "maxpool2d");
  Tensor dx(in_shape_);
  const Shape& o = dy.shape();
  std::size_t i = 0;
  for (int n = 0; n < o.n; ++n)
    for (int c = 0; c < o.c; ++c) {
      float* d = dx.channel(n, c);
      for (std::size_t j = 0; j < o.plane(); ++j, ++i)
        if (argmax_[i] >= 0) d[argmax_[i]] += dy.data()[i];
    }
  return dx;
}

Tensor AvgPool2d::forward(const Tensor& x) {
  const Shape& s = x.shape();
  const int oh = detail::conv_out(s.h, k_, stride_, 0);
  const int ow = detail::conv_out(s.w, k_, stride_, 0);
  require(oh > 0 && ow > 0, ErrorCode::Contract, "avg-pool input " + s.to_string() + " too small");
  Tensor y({s.n, s.c, oh, ow});
  const float inv = 1.0f / static_cast<float>(k_ * k_);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const float* in = x.channel(n, c);
      float* out = y.channel(n, c);
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          float acc = 0;
          for (int ky = 0; ky < k_; ++ky)
            for (int kx = 0; kx < k_; ++kx) acc += in[(oy * stride_ + ky) * s.w + ox * stride_ + kx];
          out[oy * ow + ox] = acc * inv;
        }
    }
  in_shape_ = s;
  return y;
}

Tensor AvgPool2d::backward(const Tensor& dy) {
  require_training(*this, "avgpool2d");
  Tensor dx(in_shape_);
  const Shape& o = dy.shape();
  const float inv = 1.0f / static_cast<float>(k_ * k_);
  for (int n = 0; n < o.n; ++n)
    for (int c = 0; c < o.c; ++c) {
      const float* g = dy.channel(n, c);
      float* d = dx.channel(n, c);
      for (int oy = 0; oy < o.h; ++oy)
        for (int ox = 0; ox < o.w; ++ox) {
          const float v = g[oy * o.w + ox] * inv;
          for (int ky = 0; ky < k_; ++ky)
            for (int kx = 0; kx < k_; ++kx) d[(oy * stride_ + ky) * in_shape_.w + ox * stride_ + kx] += v;
        }
    }
  return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor y({s.n, s.c, 1, 1});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const float* in = x.channel(n, c);
      double acc = 0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += in[i];
      y.at(n, c, 0, 0) = static_cast<float>(acc / static_cast<double>(s.plane()));
    }
  in_shape_ = s;
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
  require_training(*this, "global_avg_pool");
  Tensor dx(in_shape_);
  const float inv = 1.0f / static_cast<float>(in_shape_.plane());
  for (int n = 0; n < in_shape_.n; ++n)
    for (int c = 0; c < in_shape_.c; ++c) {
      const float v = dy.at(n, c, 0, 0) * inv;
      float* d = dx.channel(n, c);
      for (std::size_t i = 0; i < in_shape_.plane(); ++i) d[i] = v;
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(int in, int out, Rng& rng)
    : in_(in), out_(out), weight_({out, in, 1, 1}), weight_grad_({out, in, 1, 1}),
      bias_({1, out, 1, 1}), bias_grad_({1, out, 1, 1}) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (auto& v : weight_.span()) v = dist(rng);
  for (auto& v : bias_.span()) v = dist(rng);
}

Tensor Linear::forward(const Tensor& x) {
  const Shape& s = x.shape();
  require(static_cast<int>(s.sample()) == in_, ErrorCode::Contract,
          "linear expects " + std::to_string(in_) + " features, got " + std::to_string(s.sample()));
  Tensor y({s.n, out_, 1, 1});
  auto Y = map(y.data(), s.n, out_, out_);
  Y.noalias() = cmap(x.data(), s.n, in_, in_) * cmap(weight_.data(), out_, in_, in_).transpose();
  for (int n = 0; n < s.n; ++n)
    for (int o = 0; o < out_; ++o) Y(n, o) += bias_.data()[o];
  if (training_) input_ = x;
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  require_training(*this, "linear");
  const Shape& s = input_.shape();
  Tensor dx(s);
  const auto G = cmap(dy.data(), s.n, out_, out_);
  map(weight_grad_.data(), out_, in_, in_).noalias() += G.transpose() * cmap(input_.data(), s.n, in_, in_);
  map(dx.data(), s.n, in_, in_).noalias() = G * cmap(weight_.data(), out_, in_, in_);
  for (int n = 0; n < s.n; ++n)
    for (int o = 0; o < out_; ++o) bias_grad_.data()[o] += G(n, o);
  return dx;
}

void Linear::collect(ParamList& out, const std::string& prefix) {
  out.push_back({join(prefix, "weight"), &weight_, &weight_grad_});
  out.push_back({join(prefix, "bias"), &bias_, &bias_grad_});
}

// ---------------------------------------------------------------------------
// Sequential

Sequential& Sequential::add(std::string name, ModulePtr m) {
  m->set_training(training_);
  children_.emplace_back(std::move(name), std::move(m));
  return *this;
}

Tensor Sequential::forward(const Tensor& x) {
  if (children_.empty()) return x;
  Tensor h = children_.front().second->forward(x);
  for (std::size_t i = 1; i < children_.size(); ++i) h = children_[i].second->forward(h);
  return h;
}

Tensor Sequential::backward(const Tensor& dy) {
  if (children_.empty()) return dy;
  Tensor g = children_.back().second->backward(dy);
  for (std::size_t i = children_.size() - 1; i-- > 0;) g = children_[i].second->backward(g);
  return g;
}

void Sequential::collect(ParamList& out, const std::string& prefix) {
  for (auto& [name, m] : children_) m->collect(out, join(prefix, name));
}

void Sequential::set_training(bool on) {
  training_ = on;
  for (auto& [name, m] : children_) m->set_training(on);
}

int Sequential::weight_layers() const {
  int n = 0;
  for (const auto& [name, m] : children_) n += m->weight_layers();
  return n;
}

// ---------------------------------------------------------------------------
// DenseBlock

DenseBlock::DenseBlock(int in_channels, int layers, int growth, bool keep_input,
                       const LayerFactory& factory, Rng& rng, std::string layer_prefix)
    : in_(in_channels), growth_(growth), keep_input_(keep_input), layer_prefix_(std::move(layer_prefix)) {
  require(in_channels > 0 && layers > 0 && growth > 0, ErrorCode::Config, "invalid dense block");
  for (int i = 0; i < layers; ++i) layers_.push_back(factory(in_channels + i * growth, growth, rng));
}

int DenseBlock::out_channels() const {
  const int fresh = static_cast<int>(layers_.size()) * growth_;
  return keep_input_ ? in_ + fresh : fresh;
}

Tensor DenseBlock::forward(const Tensor& x) {
  const Shape& s = x.shape();
  require(s.c == in_, ErrorCode::Contract,
          "dense block expects " + std::to_string(in_) + " channels, got " + std::to_string(s.c));
  const int total = in_ + static_cast<int>(layers_.size()) * growth_;
  Tensor buf({s.n, total, s.h, s.w});
  add_into_channels(buf, x, 0);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const int have = in_ + static_cast<int>(i) * growth_;
    const Tensor out = layers_[i]->forward(slice_channels(buf, 0, have));
    add_into_channels(buf, out, have);
  }
  if (keep_input_) return buf;
  return slice_channels(buf, in_, total - in_);
}

Tensor DenseBlock::backward(const Tensor& dy) {
  const Shape& s = dy.shape();
  const int total = in_ + static_cast<int>(layers_.size()) * growth_;
  Tensor g({s.n, total, s.h, s.w});
  add_into_channels(g, dy, keep_input_ ? 0 : in_);
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const int have = in_ + static_cast<int>(i) * growth_;
    const Tensor d = layers_[i]->backward(slice_channels(g, have, growth_));
    add_into_channels(g, d, 0);
  }
  return slice_channels(g, 0, in_);
}

void DenseBlock::collect(ParamList& out, const std::string& prefix) {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->collect(out, join(prefix, layer_prefix_ + std::to_string(i + 1)));
}

void DenseBlock::set_training(bool on) {
  training_ = on;
  for (auto& l : layers_) l->set_training(on);
}

int DenseBlock::weight_layers() const {
  int n = 0;
  for (const auto& l : layers_) n += l->weight_layers();
  return n;
}

ModulePtr make_dense_layer(int in_channels, int growth, Rng& rng) {
  auto seq = std::make_unique<Sequential>();
  seq->emplace<BatchNorm2d>("norm", in_channels);
  seq->emplace<ReLU>("relu");
  seq->emplace<Conv2d>("conv", in_channels, growth, 3, 1, 1, true, rng);
  return seq;
}

ModulePtr make_bottleneck_dense_layer(int in_channels, int growth, int bn_size, Rng& rng) {
  auto seq = std::make_unique<Sequential>();
  seq->emplace<BatchNorm2d>("norm1", in_channels);
  seq->emplace<ReLU>("relu1");
  seq->emplace<Conv2d>("conv1", in_channels, bn_size * growth, 1, 1, 0, false, rng);
  seq->emplace<BatchNorm2d>("norm2", bn_size * growth);
  seq->emplace<ReLU>("relu2");
  seq->emplace<Conv2d>("conv2", bn_size * growth, growth, 3, 1, 1, false, rng);
  return seq;
}

Tensor softmax_channels(const Tensor& logits) {
  const Shape& s = logits.shape();
  Tensor p(s);
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    const float* z = logits.sample(n);
    float* out = p.sample(n);
    for (std::size_t i = 0; i < plane; ++i) {
      float mx = -std::numeric_limits<float>::infinity();
      for (int c = 0; c < s.c; ++c) mx = std::max(mx, z[c * plane + i]);
      double sum = 0;
      for (int c = 0; c < s.c; ++c) sum += std::exp(static_cast<double>(z[c * plane + i] - mx));
      for (int c = 0; c < s.c; ++c)
        out[c * plane + i] = static_cast<float>(std::exp(static_cast<double>(z[c * plane + i] - mx)) / sum);
    }
  }
  return p;
}

}  // namespace fundus::nn
