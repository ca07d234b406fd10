#include "gemm.hpp"

#include <algorithm>
#include <cstring>

namespace fundus::nn::detail {

void im2col(const float* x, const ConvGeom& g, int p0, int p1, float* col) {
  const int n = p1 - p0;
  for (int ci = 0; ci < g.c; ++ci) {
    const float* plane = x + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        float* dst = col + (static_cast<std::size_t>(ci) * g.k * g.k + ky * g.k + kx) * n;
        int oy = p0 / g.ow;
        int ox = p0 % g.ow;
        for (int i = 0; i < n;) {
          const int iy = oy * g.stride - g.pad + ky;
          const int run = std::min(g.ow - ox, n - i);
          if (iy < 0 || iy >= g.h) {
            std::fill(dst + i, dst + i + run, 0.0f);
          } else {
            const float* src = plane + static_cast<std::size_t>(iy) * g.w;
            int ix = ox * g.stride - g.pad + kx;
            if (g.stride == 1 && ix >= 0 && ix + run <= g.w) {
              std::memcpy(dst + i, src + ix, run * sizeof(float));
            } else {
              for (int j = 0; j < run; ++j, ix += g.stride)
                dst[i + j] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
            }
          }
          i += run;
          ox = 0;
          ++oy;
        }
      }
    }
  }
}

void col2im(const float* col, const ConvGeom& g, int p0, int p1, float* x) {
  const int n = p1 - p0;
  for (int ci = 0; ci < g.c; ++ci) {
    float* plane = x + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const float* src = col + (static_cast<std::size_t>(ci) * g.k * g.k + ky * g.k + kx) * n;
        int oy = p0 / g.ow;
        int ox = p0 % g.ow;
        for (int i = 0; i < n;) {
          const int iy = oy * g.stride - g.pad + ky;
          const int run = std::min(g.ow - ox, n - i);
          if (iy >= 0 && iy < g.h) {
            float* dst = plane + static_cast<std::size_t>(iy) * g.w;
            int ix = ox * g.stride - g.pad + kx;
            for (int j = 0; j < run; ++j, ix += g.stride)
              if (ix >= 0 && ix < g.w) dst[ix] += src[i + j];
          }
          i += run;
          ox = 0;
          ++oy;
        }
      }
    }
  }
}

int chunk_positions(const ConvGeom& g) {
  constexpr std::size_t kBudget = std::size_t{1} << 21;  // floats (8 MiB)
  const std::size_t per = static_cast<std::size_t>(std::max(1, g.rows()));
  const std::size_t want = std::max<std::size_t>(kBudget / per, 64);
  return static_cast<int>(std::min<std::size_t>(want, static_cast<std::size_t>(g.positions())));
}

}  // namespace fundus::nn::detail
