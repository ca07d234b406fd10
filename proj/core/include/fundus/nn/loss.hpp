#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <vector>

#include "fundus/error.hpp"

namespace fundus::nn {

inline constexpr double kLogFloor = 1e-7;

/// Class-weighted cross entropy averaged over all N*P positions:
///   L = 1/(N P) * sum_{n,p} w[t] * -log(max(softmax(z)[t], 1e-7)).
///
/// `logits` is laid out N x C x P (C class planes of P positions per
/// sample), `targets` N x P. If `grad` is non-empty it receives dL/dz; the
/// gradient through the floor is zero where the target probability is below
/// it.
template <std::floating_point T>
T weighted_cross_entropy_logits(std::span<const T> logits, int n, int c, std::size_t p,
                                std::span<const std::uint8_t> targets,
                                std::span<const double> weights, std::span<T> grad = {}) {
  const std::size_t total = static_cast<std::size_t>(n) * p;
  require(logits.size() == total * c && targets.size() == total, ErrorCode::Contract,
          "cross-entropy shape mismatch");
  require(static_cast<int>(weights.size()) == c, ErrorCode::Contract,
          "cross-entropy needs one weight per class");
  require(grad.empty() || grad.size() == logits.size(), ErrorCode::Contract,
          "cross-entropy gradient buffer has wrong size");
  std::vector<T> prob(c);
  T loss = 0;
  const T inv_total = T(1) / static_cast<T>(total);
  for (int s = 0; s < n; ++s) {
    const T* z = logits.data() + static_cast<std::size_t>(s) * c * p;
    for (std::size_t i = 0; i < p; ++i) {
      const int t = targets[static_cast<std::size_t>(s) * p + i];
      require(t < c, ErrorCode::Contract, "target class out of range");
      T mx = z[i];
      for (int k = 1; k < c; ++k) mx = std::max(mx, z[k * p + i]);
      T sum = 0;
      for (int k = 0; k < c; ++k) {
        prob[k] = std::exp(z[k * p + i] - mx);
        sum += prob[k];
      }
      for (int k = 0; k < c; ++k) prob[k] /= sum;
      const T w = static_cast<T>(weights[t]);
      const bool floored = prob[t] < static_cast<T>(kLogFloor);
      loss += w * -std::log(floored ? static_cast<T>(kLogFloor) : prob[t]);
      if (!grad.empty()) {
        T* g = grad.data() + static_cast<std::size_t>(s) * c * p;
        for (int k = 0; k < c; ++k)
          g[k * p + i] = floored ? T(0) : w * inv_total * (prob[k] - (k == t ? T(1) : T(0)));
      }
    }
  }
  return loss * inv_total;
}

/// The same loss evaluated from probabilities (C x P planes per sample).
template <std::floating_point T>
T weighted_cross_entropy_probs(std::span<const T> probs, int n, int c, std::size_t p,
                               std::span<const std::uint8_t> targets,
                               std::span<const double> weights) {
  const std::size_t total = static_cast<std::size_t>(n) * p;
  require(probs.size() == total * c && targets.size() == total, ErrorCode::Contract,
          "cross-entropy shape mismatch");
  require(static_cast<int>(weights.size()) == c, ErrorCode::Contract,
          "cross-entropy needs one weight per class");
  T loss = 0;
  for (int s = 0; s < n; ++s) {
    const T* q = probs.data() + static_cast<std::size_t>(s) * c * p;
    for (std::size_t i = 0; i < p; ++i) {
      const int t = targets[static_cast<std::size_t>(s) * p + i];
      require(t < c, ErrorCode::Contract, "target class out of range");
      const T pt = std::max(q[t * p + i], static_cast<T>(kLogFloor));
      loss += static_cast<T>(weights[t]) * -std::log(pt);
    }
  }
  return loss / static_cast<T>(total);
}

}  // namespace fundus::nn
