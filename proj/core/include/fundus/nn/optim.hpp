#pragma once

#include <vector>

#include "fundus/nn/module.hpp"

namespace fundus::nn {

class Adam {
 public:
  Adam(ParamList params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  ParamList params_;
  std::vector<std::vector<float>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long step_ = 0;
};

enum class PlateauDecay { TenPercent, TenFold };

/// Multiplies the learning rate by the decay factor once the monitored loss
/// has failed to improve by at least `threshold` for `patience` consecutive
/// epochs; the counter restarts after each reduction.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor, int patience, double threshold);

  /// Feeds one epoch's validation loss; returns true when the rate was cut.
  bool observe(double loss, Adam& opt);

  double factor() const { return factor_; }
  int events() const { return events_; }

 private:
  double factor_;
  int patience_;
  double threshold_;
  double best_;
  int bad_epochs_ = 0;
  int events_ = 0;
};

double plateau_factor(PlateauDecay mode);

/// lr for a 1-based epoch under step decay: lr0 * gamma^floor((epoch-1)/step).
double step_decay_lr(double lr0, double gamma, int step, int epoch);

}  // namespace fundus::nn
