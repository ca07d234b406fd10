#include "fundus/nn/optim.hpp"

#include <cmath>
#include <limits>

#include "fundus/error.hpp"

namespace fundus::nn {

Adam::Adam(ParamList params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& p : params) {
    if (!p.trainable()) continue;
    params_.push_back(p);
    m_.emplace_back(p.value->numel(), 0.0f);
    v_.emplace_back(p.value->numel(), 0.0f);
  }
}

void Adam::step() {
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  const float b1 = static_cast<float>(beta1_);
  const float b2 = static_cast<float>(beta2_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    float* w = params_[k].value->data();
    const float* g = params_[k].grad->data();
    float* m = m_[k].data();
    float* v = v_[k].data();
    for (std::size_t i = 0; i < m_[k].size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      w[i] -= static_cast<float>(lr_ * mh / (std::sqrt(vh) + eps_));
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.grad->fill(0.0f);
}

PlateauScheduler::PlateauScheduler(double factor, int patience, double threshold)
    : factor_(factor), patience_(patience), threshold_(threshold),
      best_(std::numeric_limits<double>::infinity()) {
  require(factor > 0 && factor < 1, ErrorCode::Config, "plateau factor must lie in (0,1)");
  require(patience >= 1, ErrorCode::Config, "plateau patience must be >= 1");
}

bool PlateauScheduler::observe(double loss, Adam& opt) {
  if (loss < best_ - threshold_) {
    best_ = loss;
    bad_epochs_ = 0;
    return false;
  }
  if (++bad_epochs_ < patience_) return false;
  opt.set_lr(opt.lr() * factor_);
  bad_epochs_ = 0;
  ++events_;
  return true;
}

double plateau_factor(PlateauDecay mode) { return mode == PlateauDecay::TenPercent ? 0.9 : 0.1; }

double step_decay_lr(double lr0, double gamma, int step, int epoch) {
  require(epoch >= 1 && step >= 1, ErrorCode::Argument, "epochs are 1-based and step >= 1");
  return lr0 * std::pow(gamma, (epoch - 1) / step);
}

}  // namespace fundus::nn
