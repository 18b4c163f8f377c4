#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ntl/nn/layers.hpp"

namespace ntl::nn {

// Activation caches for one forward pass through a Sequential, one Ctx per
// layer. Keeping the tape outside the layers lets a shared network run
// several forward/backward pairs (e.g. source batch and auxiliary batch)
// before its parameters are stepped.
struct Tape {
  std::vector<Ctx> ctxs;
};

class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;
  Sequential(const Sequential&) = delete;
  Sequential& operator=(const Sequential&) = delete;

  Sequential clone() const;

  void add(std::unique_ptr<Layer> layer);
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }

  // `tape` may be null for pure inference. Eval-mode forward with a null tape
  // does not mutate the network, so it is safe to call concurrently.
  Tensor forward(const Tensor& x, Tape* tape, Mode mode, Rng* rng = nullptr);
  // Backpropagates through the recorded tape and returns dL/dinput.
  Tensor backward(const Tensor& gy, Tape& tape);

  std::vector<Param*> params();
  void zero_grad();
  void set_trainable(bool trainable);
  // Parameter/buffer tensors with names prefixed "L<i>.<kind>.".
  std::vector<std::pair<std::string, Tensor*>> state();
  // Seeded initialization of every layer in order.
  void init(Rng& rng);
  std::int64_t param_count();

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// y = x + inner(x). The inner stack must preserve shape.
class Residual : public Layer {
 public:
  explicit Residual(Sequential inner) : inner_(std::move(inner)) {}
  std::string kind() const override { return "residual"; }
  Tensor forward(const Tensor& x, Ctx* ctx, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& gy, Ctx& ctx) override;
  std::vector<Param*> params() override { return inner_.params(); }
  std::vector<std::pair<std::string, Tensor*>> state() override;
  void freeze_leading_channels(std::int64_t n) override;
  void freeze_channel_fraction(std::int64_t dir, std::int64_t num_directions) override;
  std::int64_t channel_dim() const override;
  void init(Rng& rng) override { inner_.init(rng); }
  std::unique_ptr<Layer> clone() const override;

  Sequential inner_;
};

}  // namespace ntl::nn
