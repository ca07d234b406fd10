#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fundus::nn {

/// NCHW shape. Dense and pooled activations use H = W = 1.
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample() const { return static_cast<std::size_t>(c) * h * w; }
  std::string to_string() const;
  bool operator==(const Shape&) const = default;
};

/// Contiguous float32 NCHW tensor with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> span() { return data_; }
  std::span<const float> span() const { return data_; }

  float* sample(int n) { return data_.data() + n * shape_.sample(); }
  const float* sample(int n) const { return data_.data() + n * shape_.sample(); }
  float* channel(int n, int c) { return sample(n) + c * shape_.plane(); }
  const float* channel(int n, int c) const { return sample(n) + c * shape_.plane(); }

  float& at(int n, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  float at(int n, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  void fill(float v);
  void add(const Tensor& other);  // elementwise, shapes must match
  void reshape(Shape shape);      // same numel

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Concatenates along channels; every input shares N, H, W.
Tensor concat_channels(std::span<const Tensor* const> parts);
/// Channels [begin, begin + count) of every sample.
Tensor slice_channels(const Tensor& t, int begin, int count);
/// Adds `src` into channels [begin, begin + src.c) of `dst`.
void add_into_channels(Tensor& dst, const Tensor& src, int begin);
/// Stacks single-sample tensors into a batch.
Tensor stack_batch(std::span<const Tensor> samples);
Tensor take_sample(const Tensor& batch, int n);

}  // namespace fundus::nn
