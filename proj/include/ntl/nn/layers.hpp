#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ntl/rng.hpp"
#include "ntl/tensor.hpp"

namespace ntl::nn {

enum class Mode { kTrain, kEval };

// One optimizable tensor. `frozen` is an optional per-entry mask (1 = the
// optimizer must leave the entry untouched); an empty mask means fully
// trainable. `trainable == false` disables the whole tensor.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  std::vector<std::uint8_t> frozen;

  void zero_grad() { grad.zero(); }
  bool entry_frozen(std::int64_t i) const {
    return !frozen.empty() && frozen[static_cast<std::size_t>(i)] != 0;
  }
  void freeze_entry(std::int64_t i) {
    if (frozen.empty()) frozen.assign(static_cast<std::size_t>(value.size()), 0);
    frozen[static_cast<std::size_t>(i)] = 1;
  }
};

struct Tape;

// Per-forward activation cache. Owned by the caller (inside a Tape), so one
// layer object can serve several concurrent forward passes in eval mode.
struct Ctx {
  std::vector<Tensor> saved;
  std::unique_ptr<Tape> sub;  // for container layers
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  // `ctx` may be null (inference only). `rng` is required only by layers that
  // sample in train mode. Eval-mode forward never mutates the layer.
  virtual Tensor forward(const Tensor& x, Ctx* ctx, Mode mode, Rng* rng) = 0;
  // Accumulates parameter gradients and returns dL/dx. Requires the Ctx
  // produced by the matching forward call.
  virtual Tensor backward(const Tensor& gy, Ctx& ctx) = 0;
  virtual std::vector<Param*> params() { return {}; }
  // Named tensors to serialize: parameters plus non-trainable buffers.
  virtual std::vector<std::pair<std::string, Tensor*>> state() {
    std::vector<std::pair<std::string, Tensor*>> s;
    for (auto* p : params()) s.emplace_back(p->name, &p->value);
    return s;
  }
  // Size of the output-channel axis for parameterized layers, 0 otherwise.
  virtual std::int64_t channel_dim() const { return 0; }
  // Freezes the first `n` output channels (weights and bias entries).
  virtual void freeze_leading_channels(std::int64_t n);
  // Freezes the first floor(dir * channel_dim / num_directions) channels.
  // Containers recurse so the fraction is applied per parameterized layer.
  virtual void freeze_channel_fraction(std::int64_t dir, std::int64_t num_directions);
  virtual void init(Rng& rng) {}
  virtual std::unique_ptr<Layer> clone() const = 0;
};

class Linear : public Layer {
 public:
  Linear(std::int64_t in_features, std::int64_t out_features);
  std::string kind() const override { return "linear"; }
  Tensor forward(const Tensor& x, Ctx* ctx, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& gy, Ctx& ctx) override;
  std::vector<Param*> params() override { return {&w_, &b_}; }
  std::int64_t channel_dim() const override { return out_; }
  void freeze_leading_channels(std::int64_t n) override;
  void init(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override;

  Param w_;  // (out, in)
  Param b_;  // (out)
  std::int64_t in_, out_;
};

class Conv2d : public Layer {
 public:
  Conv2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel, std::int64_t stride,
         std::int64_t pad);
  std::string kind() const override { return "conv2d"; }
  Tensor forward(const Tensor& x, Ctx* ctx, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& gy, Ctx& ctx) override;
  std::vector<Param*> params() override { return {&w_, &b_}; }
  std::int64_t channel_dim() const override { return out_ch_; }
  void freeze_leading_channels(std::int64_t n) override;
  void init(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override;

  Param w_;  // (out_ch, in_ch, k, k)
  Param b_;  // (out_ch)
  std::int64_t in_ch_, out_ch_, k_, stride_, pad_;
};

class ConvTranspose2d : public Layer {
 public:
  ConvTranspose2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
                  std::int64_t stride, std::int64_t pad);
  std::string kind() const override { return "convtranspose2d"; }
  Tensor forward(const Tensor& x, Ctx* ctx, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& gy, Ctx& ctx) override;
  std::vector<Param*> params() override { return {&w_, &b_}; }
  std::int64_t channel_dim() const override { return out_ch_; }
  void freeze_leading_channels(std::int64_t n) override;
  void init(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override;

  Param w_;  // (in_ch, out_ch, k, k)
  Param b_;  // (out_ch)
  std::int64_t in_ch_, out_ch_, k_, stride_, pad_;
};

class ReLU : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  Tensor forward(const Tensor& x, Ctx* ctx, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& gy, Ctx& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(); }
};

class LeakyReLU : public Layer {
 public:
  explicit LeakyReLU(double slope = 0.2) : slope_(slope) {}
  std::string kind() const override { return "leakyrelu"; }
  Tensor forward(const Tensor& x, Ctx* ctx, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& gy, Ctx& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<LeakyReLU>(slope_); }
  double slope_;
};

class Tanh : public Layer {
 public:
  std::string kind() const override { return "tanh"; }
  Tensor forward(const Tensor& x, Ctx* ctx, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& gy, Ctx& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Tanh>(); }
};

class Sigmoid : public Layer {
 public:
  std::string kind() const override { return "sigmoid"; }
  Tensor forward(const Tensor& x, Ctx* ctx, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& gy, Ctx& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sigmoid>(); }
};

// Row-wise softmax over the last axis of a 2-D input.
class Softmax : public Layer {
 public:
  std::string kind() const override { return "softmax"; }
  Tensor forward(const Tensor& x, Ctx* ctx, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& gy, Ctx& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Softmax>(); }
};

class BatchNorm2d : public Layer {
 public:
  explicit BatchNorm2d(std::int64_t channels, double momentum = 0.1, double eps = 1e-5);
  std::string kind() const override { return "batchnorm2d"; }
  Tensor forward(const Tensor& x, Ctx* ctx, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& gy, Ctx& ctx) override;
  std::vector<Param*> params() override { return {&gamma_, &beta_}; }
  std::vector<std::pair<std::string, Tensor*>> state() override;
  std::int64_t channel_dim() const override { return channels_; }
  void freeze_leading_channels(std::int64_t n) override;
  std::unique_ptr<Layer> clone() const override;

  Param gamma_, beta_;
  Tensor running_mean_, running_var_;
  std::int64_t channels_;
  double momentum_, eps_;
};

// Inverted dropout; identity in eval mode.
class Dropout : public Layer {
 public:
  explicit Dropout(double p) : p_(p) {}
  std::string kind() const override { return "dropout"; }
  Tensor forward(const Tensor& x, Ctx* ctx, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& gy, Ctx& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dropout>(p_); }
  double p_;
};

class MaxPool2d : public Layer {
 public:
  MaxPool2d(std::int64_t kernel, std::int64_t stride);
  std::string kind() const override { return "maxpool2d"; }
  Tensor forward(const Tensor& x, Ctx* ctx, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& gy, Ctx& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2d>(k_, stride_); }
  std::int64_t k_, stride_;
};

// (N, C, H, W) -> (N, C*H*W)
class Flatten : public Layer {
 public:
  std::string kind() const override { return "flatten"; }
  Tensor forward(const Tensor& x, Ctx* ctx, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& gy, Ctx& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(); }
};

// (N, D) -> (N, C, H, W) with D == C*H*W.
class Reshape : public Layer {
 public:
  Reshape(std::int64_t c, std::int64_t h, std::int64_t w) : c_(c), h_(h), w_(w) {}
  std::string kind() const override { return "reshape"; }
  Tensor forward(const Tensor& x, Ctx* ctx, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& gy, Ctx& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Reshape>(c_, h_, w_); }
  std::int64_t c_, h_, w_;
};

// im2col / col2im core shared by Conv2d and ConvTranspose2d. `cols` has shape
// (C*k*k, N*oh*ow) with column index m = (n*oh + y)*ow + x.
void im2col(const Tensor& x, std::int64_t k, std::int64_t stride, std::int64_t pad, Tensor& cols);
void col2im(const Tensor& cols, std::int64_t k, std::int64_t stride, std::int64_t pad, Tensor& x);
std::int64_t conv_out_size(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad);

}  // namespace ntl::nn
