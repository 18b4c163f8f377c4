#include "ntl/nn/adam.hpp"

#include <cmath>

#include "ntl/errors.hpp"

namespace ntl::nn {

Adam::Adam(std::vector<Param*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  state_.reserve(params_.size());
  for (auto* p : params_) {
    State s;
    s.m = Tensor(p->value.shape());
    s.v = Tensor(p->value.shape());
    state_.push_back(std::move(s));
  }
}

void Adam::set_lr_scale(const Param* param, Tensor scale) {
  if (!scale.same_shape(param->value)) throw DimensionError("adam: lr scale shape mismatch");
  lr_scale_[param] = std::move(scale);
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Param* p = params_[pi];
    if (!p->trainable) continue;
    State& s = state_[pi];
    const Tensor* scale = nullptr;
    if (auto it = lr_scale_.find(p); it != lr_scale_.end()) scale = &it->second;
    const std::int64_t n = p->value.size();
    for (std::int64_t i = 0; i < n; ++i) {
      if (p->entry_frozen(i)) continue;
      const double g = p->grad[i];
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      double step = cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      if (scale) step *= (*scale)[i];
      p->value[i] -= step;
    }
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

}  // namespace ntl::nn
