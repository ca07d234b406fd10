#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fundus/nn/tensor.hpp"

namespace fundus::nn {

using Rng = std::mt19937_64;

/// A named tensor owned by a module. Buffers (BatchNorm running statistics)
/// have no gradient.
struct Param {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;

  bool trainable() const { return grad != nullptr; }
};

using ParamList = std::vector<Param>;

/// Layer with explicit forward/backward. Activations needed by backward are
/// cached only in training mode; backward in eval mode is a contract error.
class Module {
 public:
  virtual ~Module() = default;

  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual void collect(ParamList& /*out*/, const std::string& /*prefix*/) {}
  virtual void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  /// Number of convolution / transposed-convolution / dense layers.
  virtual int weight_layers() const { return 0; }

 protected:
  bool training_ = false;
};

using ModulePtr = std::unique_ptr<Module>;

ParamList parameters(Module& m, const std::string& prefix = "");
std::size_t count_parameters(Module& m);
void zero_grad(Module& m);

}  // namespace fundus::nn
