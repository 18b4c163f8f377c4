#include "ntl/nn/sequential.hpp"

#include "ntl/errors.hpp"

namespace ntl::nn {

Sequential Sequential::clone() const {
  Sequential s;
  s.layers_.reserve(layers_.size());
  for (const auto& l : layers_) s.layers_.push_back(l->clone());
  return s;
}

void Sequential::add(std::unique_ptr<Layer> layer) {
  layers_.push_back(std::move(layer));
}

Tensor Sequential::forward(const Tensor& x, Tape* tape, Mode mode, Rng* rng) {
  if (tape) tape->ctxs.resize(layers_.size());
  Tensor cur = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Ctx* ctx = tape ? &tape->ctxs[i] : nullptr;
    cur = layers_[i]->forward(cur, ctx, mode, rng);
  }
  return cur;
}

Tensor Sequential::backward(const Tensor& gy, Tape& tape) {
  if (tape.ctxs.size() != layers_.size()) throw Error("sequential: tape does not match network");
  Tensor cur = gy;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    cur = layers_[i]->backward(cur, tape.ctxs[i]);
  }
  return cur;
}

std::vector<Param*> Sequential::params() {
  std::vector<Param*> out;
  for (auto& l : layers_) {
    for (auto* p : l->params()) out.push_back(p);
  }
  return out;
}

void Sequential::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

void Sequential::set_trainable(bool trainable) {
  for (auto* p : params()) p->trainable = trainable;
}

std::vector<std::pair<std::string, Tensor*>> Sequential::state() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string prefix = "L" + std::to_string(i) + "." + layers_[i]->kind() + ".";
    for (auto& [name, tensor] : layers_[i]->state()) {
      out.emplace_back(prefix + name, tensor);
    }
  }
  return out;
}

void Sequential::init(Rng& rng) {
  for (auto& l : layers_) l->init(rng);
}

std::int64_t Sequential::param_count() {
  std::int64_t n = 0;
  for (auto* p : params()) n += p->value.size();
  return n;
}

Tensor Residual::forward(const Tensor& x, Ctx* ctx, Mode mode, Rng* rng) {
  Tape* sub = nullptr;
  if (ctx) {
    ctx->saved.clear();
    if (!ctx->sub) ctx->sub = std::make_unique<Tape>();
    sub = ctx->sub.get();
  }
  Tensor y = inner_.forward(x, sub, mode, rng);
  if (!y.same_shape(x)) throw DimensionError("residual: inner stack changed shape");
  y.add_(x);
  return y;
}

Tensor Residual::backward(const Tensor& gy, Ctx& ctx) {
  Tensor gx = inner_.backward(gy, *ctx.sub);
  gx.add_(gy);
  return gx;
}

std::vector<std::pair<std::string, Tensor*>> Residual::state() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, tensor] : inner_.state()) out.emplace_back("res." + name, tensor);
  return out;
}

void Residual::freeze_leading_channels(std::int64_t n) {
  for (std::size_t i = 0; i < inner_.size(); ++i) inner_.layer(i).freeze_leading_channels(n);
}

std::int64_t Residual::channel_dim() const {
  for (std::size_t i = 0; i < inner_.size(); ++i) {
    if (inner_.layer(i).channel_dim() > 0) return inner_.layer(i).channel_dim();
  }
  return 0;
}

void Residual::freeze_channel_fraction(std::int64_t dir, std::int64_t num_directions) {
  for (std::size_t i = 0; i < inner_.size(); ++i) {
    inner_.layer(i).freeze_channel_fraction(dir, num_directions);
  }
}

std::unique_ptr<Layer> Residual::clone() const {
  return std::make_unique<Residual>(inner_.clone());
}

}  // namespace ntl::nn
