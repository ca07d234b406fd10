#pragma once

#include <Eigen/Core>

namespace fundus::nn::detail {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM, 0, Eigen::OuterStride<>>;
using CMapRM = Eigen::Map<const MatRM, 0, Eigen::OuterStride<>>;

inline MapRM map(float* p, int rows, int cols, int stride) {
  return MapRM(p, rows, cols, Eigen::OuterStride<>(stride));
}
inline CMapRM cmap(const float* p, int rows, int cols, int stride) {
  return CMapRM(p, rows, cols, Eigen::OuterStride<>(stride));
}

// Geometry of a 2-D convolution over one sample: input c x h x w, square
// kernel k, producing oh x ow output positions.
struct ConvGeom {
  int c, h, w, k, stride, pad, oh, ow;

  int rows() const { return c * k * k; }
  int positions() const { return oh * ow; }
};

inline int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// Unfolds output positions [p0, p1) into col (rows() x (p1 - p0)).
void im2col(const float* x, const ConvGeom& g, int p0, int p1, float* col);
// Accumulates col back into x.
void col2im(const float* col, const ConvGeom& g, int p0, int p1, float* x);

// Output positions processed per im2col chunk.
int chunk_positions(const ConvGeom& g);

}  // namespace fundus::nn::detail
