#pragma once

#include <unordered_map>
#include <vector>

#include "ntl/nn/layers.hpp"

namespace ntl::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Skips non-trainable parameters and frozen
// entries outright (their moments are never touched), and supports an
// optional per-entry learning-rate scale (used by the EWC attack).
class Adam {
 public:
  Adam(std::vector<Param*> params, AdamConfig cfg);

  void step();
  void zero_grad();
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  // `scale` must match the parameter's shape; entries multiply the step size.
  void set_lr_scale(const Param* param, Tensor scale);

 private:
  struct State {
    Tensor m, v;
  };
  std::vector<Param*> params_;
  std::vector<State> state_;
  std::unordered_map<const Param*, Tensor> lr_scale_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

}  // namespace ntl::nn
