#include "fundus/nn/tensor.hpp"

#include <algorithm>
#include <cstring>

#include "fundus/error.hpp"

namespace fundus::nn {

std::string Shape::to_string() const {
  return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + "]";
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  require(data_.size() == shape_.numel(), ErrorCode::Contract,
          "tensor data size does not match shape " + shape_.to_string());
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add(const Tensor& other) {
  require(other.shape_ == shape_, ErrorCode::Contract,
          "tensor add shape mismatch " + shape_.to_string() + " vs " + other.shape_.to_string());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::reshape(Shape shape) {
  require(shape.numel() == data_.size(), ErrorCode::Contract,
          "cannot reshape " + shape_.to_string() + " to " + shape.to_string());
  shape_ = shape;
}

Tensor concat_channels(std::span<const Tensor* const> parts) {
  require(!parts.empty(), ErrorCode::Contract, "concat of zero tensors");
  Shape out = parts[0]->shape();
  out.c = 0;
  for (const Tensor* p : parts) {
    const Shape& s = p->shape();
    require(s.n == out.n && s.h == out.h && s.w == out.w, ErrorCode::Contract,
            "concat shape mismatch " + s.to_string() + " vs " + parts[0]->shape().to_string());
    out.c += s.c;
  }
  Tensor t(out);
  for (int n = 0; n < out.n; ++n) {
    float* dst = t.sample(n);
    for (const Tensor* p : parts) {
      const std::size_t len = p->shape().sample();
      std::memcpy(dst, p->sample(n), len * sizeof(float));
      dst += len;
    }
  }
  return t;
}

Tensor slice_channels(const Tensor& t, int begin, int count) {
  const Shape& s = t.shape();
  require(begin >= 0 && count >= 0 && begin + count <= s.c, ErrorCode::Contract,
          "channel slice out of range");
  Tensor out({s.n, count, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    std::memcpy(out.sample(n), t.channel(n, begin), count * s.plane() * sizeof(float));
  return out;
}

void add_into_channels(Tensor& dst, const Tensor& src, int begin) {
  const Shape& d = dst.shape();
  const Shape& s = src.shape();
  require(s.n == d.n && s.h == d.h && s.w == d.w && begin + s.c <= d.c, ErrorCode::Contract,
          "channel accumulate out of range");
  const std::size_t len = s.sample();
  for (int n = 0; n < s.n; ++n) {
    float* out = dst.channel(n, begin);
    const float* in = src.sample(n);
    for (std::size_t i = 0; i < len; ++i) out[i] += in[i];
  }
}

Tensor stack_batch(std::span<const Tensor> samples) {
  require(!samples.empty(), ErrorCode::Contract, "empty batch");
  Shape s = samples[0].shape();
  require(s.n == 1, ErrorCode::Contract, "stack_batch expects single-sample tensors");
  s.n = static_cast<int>(samples.size());
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    require(samples[n].shape() == samples[0].shape(), ErrorCode::Contract, "batch shape mismatch");
    std::memcpy(out.sample(n), samples[n].data(), s.sample() * sizeof(float));
  }
  return out;
}

Tensor take_sample(const Tensor& batch, int n) {
  Shape s = batch.shape();
  require(n >= 0 && n < s.n, ErrorCode::Contract, "sample index out of range");
  s.n = 1;
  Tensor out(s);
  std::memcpy(out.data(), batch.sample(n), s.sample() * sizeof(float));
  return out;
}

}  // namespace fundus::nn
