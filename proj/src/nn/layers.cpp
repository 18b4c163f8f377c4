#include "ntl/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "ntl/errors.hpp"

namespace ntl::nn {

namespace {

Tensor shape_tensor(const std::vector<std::int64_t>& shape) {
  Tensor t({static_cast<std::int64_t>(shape.size())});
  for (std::size_t i = 0; i < shape.size(); ++i) t[static_cast<std::int64_t>(i)] = static_cast<double>(shape[i]);
  return t;
}

std::vector<std::int64_t> shape_from_tensor(const Tensor& t) {
  std::vector<std::int64_t> shape(static_cast<std::size_t>(t.size()));
  for (std::int64_t i = 0; i < t.size(); ++i) shape[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(t[i]);
  return shape;
}

void uniform_init(Tensor& t, double bound, Rng& rng) {
  rng.fill_uniform(t.data(), static_cast<std::size_t>(t.size()), -bound, bound);
}

void require_4d(const Tensor& x, const char* who) {
  if (x.ndim() != 4) throw DimensionError(std::string(who) + ": expected 4-D input");
}

}  // namespace

void Layer::freeze_leading_channels(std::int64_t) {}

void Layer::freeze_channel_fraction(std::int64_t dir, std::int64_t num_directions) {
  const std::int64_t d = channel_dim();
  if (d > 0) freeze_leading_channels(dir * d / num_directions);
}

std::int64_t conv_out_size(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  const std::int64_t out = (in + 2 * pad - k) / stride + 1;
  if (out <= 0) throw DimensionError("convolution output size is not positive");
  if ((in + 2 * pad - k) % stride != 0) {
    throw DimensionError("convolution geometry does not divide evenly");
  }
  return out;
}

void im2col(const Tensor& x, std::int64_t k, std::int64_t stride, std::int64_t pad, Tensor& cols) {
  require_4d(x, "im2col");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = conv_out_size(h, k, stride, pad);
  const std::int64_t ow = conv_out_size(w, k, stride, pad);
  const std::int64_t rows = c * k * k, m = n * oh * ow;
  if (cols.ndim() != 2 || cols.dim(0) != rows || cols.dim(1) != m) {
    cols = Tensor({rows, m});
  }
  double* cd = cols.data();
  const double* xd = x.data();
  for (std::int64_t ni = 0; ni < n; ++ni) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const double* xc = xd + (ni * c + ci) * h * w;
      for (std::int64_t ki = 0; ki < k; ++ki) {
        for (std::int64_t kj = 0; kj < k; ++kj) {
          const std::int64_t r = (ci * k + ki) * k + kj;
          double* crow = cd + r * m + ni * oh * ow;
          for (std::int64_t y = 0; y < oh; ++y) {
            const std::int64_t iy = y * stride - pad + ki;
            double* dst = crow + y * ow;
            if (iy < 0 || iy >= h) {
              std::fill(dst, dst + ow, 0.0);
              continue;
            }
            const double* src = xc + iy * w;
            for (std::int64_t xo = 0; xo < ow; ++xo) {
              const std::int64_t ix = xo * stride - pad + kj;
              dst[xo] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im(const Tensor& cols, std::int64_t k, std::int64_t stride, std::int64_t pad, Tensor& x) {
  require_4d(x, "col2im");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = conv_out_size(h, k, stride, pad);
  const std::int64_t ow = conv_out_size(w, k, stride, pad);
  const std::int64_t rows = c * k * k, m = n * oh * ow;
  if (cols.ndim() != 2 || cols.dim(0) != rows || cols.dim(1) != m) {
    throw DimensionError("col2im: cols shape mismatch");
  }
  x.zero();
  const double* cd = cols.data();
  double* xd = x.data();
  for (std::int64_t ni = 0; ni < n; ++ni) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      double* xc = xd + (ni * c + ci) * h * w;
      for (std::int64_t ki = 0; ki < k; ++ki) {
        for (std::int64_t kj = 0; kj < k; ++kj) {
          const std::int64_t r = (ci * k + ki) * k + kj;
          const double* crow = cd + r * m + ni * oh * ow;
          for (std::int64_t y = 0; y < oh; ++y) {
            const std::int64_t iy = y * stride - pad + ki;
            if (iy < 0 || iy >= h) continue;
            const double* src = crow + y * ow;
            double* dst = xc + iy * w;
            for (std::int64_t xo = 0; xo < ow; ++xo) {
              const std::int64_t ix = xo * stride - pad + kj;
              if (ix >= 0 && ix < w) dst[ix] += src[xo];
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::int64_t in_features, std::int64_t out_features)
    : in_(in_features), out_(out_features) {
  w_.name = "w";
  w_.value = Tensor({out_, in_});
  w_.grad = Tensor({out_, in_});
  b_.name = "b";
  b_.value = Tensor({out_});
  b_.grad = Tensor({out_});
}

void Linear::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  uniform_init(w_.value, bound, rng);
  uniform_init(b_.value, bound, rng);
}

Tensor Linear::forward(const Tensor& x, Ctx* ctx, Mode, Rng*) {
  if (x.ndim() != 2 || x.dim(1) != in_) throw DimensionError("linear: input shape mismatch");
  const std::int64_t n = x.dim(0);
  Tensor y({n, out_});
  y.mat().noalias() = x.mat() * w_.value.mat().transpose();
  y.mat().rowwise() += b_.value.flat().transpose();
  if (ctx) {
    ctx->saved.clear();
    ctx->saved.push_back(x);
  }
  return y;
}

Tensor Linear::backward(const Tensor& gy, Ctx& ctx) {
  const Tensor& x = ctx.saved[0];
  w_.grad.mat().noalias() += gy.mat().transpose() * x.mat();
  b_.grad.flat() += gy.mat().colwise().sum().transpose();
  Tensor gx({x.dim(0), in_});
  gx.mat().noalias() = gy.mat() * w_.value.mat();
  return gx;
}

void Linear::freeze_leading_channels(std::int64_t n) {
  for (std::int64_t r = 0; r < std::min(n, out_); ++r) {
    for (std::int64_t c = 0; c < in_; ++c) w_.freeze_entry(r * in_ + c);
    b_.freeze_entry(r);
  }
}

std::unique_ptr<Layer> Linear::clone() const {
  auto l = std::make_unique<Linear>(in_, out_);
  l->w_ = w_;
  l->b_ = b_;
  return l;
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel, std::int64_t stride,
               std::int64_t pad)
    : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride), pad_(pad) {
  w_.name = "w";
  w_.value = Tensor({out_ch_, in_ch_, k_, k_});
  w_.grad = Tensor({out_ch_, in_ch_, k_, k_});
  b_.name = "b";
  b_.value = Tensor({out_ch_});
  b_.grad = Tensor({out_ch_});
}

void Conv2d::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch_ * k_ * k_));
  uniform_init(w_.value, bound, rng);
  uniform_init(b_.value, bound, rng);
}

Tensor Conv2d::forward(const Tensor& x, Ctx* ctx, Mode, Rng*) {
  require_4d(x, "conv2d");
  if (x.dim(1) != in_ch_) throw DimensionError("conv2d: channel mismatch");
  const std::int64_t n = x.dim(0);
  const std::int64_t oh = conv_out_size(x.dim(2), k_, stride_, pad_);
  const std::int64_t ow = conv_out_size(x.dim(3), k_, stride_, pad_);
  const std::int64_t ckk = in_ch_ * k_ * k_;
  const std::int64_t spatial = oh * ow;
  Tensor cols;
  im2col(x, k_, stride_, pad_, cols);
  Tensor y({n, out_ch_, oh, ow});
  auto wmat = w_.value.mat(out_ch_, ckk);
  auto cmat = cols.mat();
  for (std::int64_t ni = 0; ni < n; ++ni) {
    MatMap yn(y.data() + ni * out_ch_ * spatial, out_ch_, spatial);
    yn.noalias() = wmat * cmat.middleCols(ni * spatial, spatial);
    yn.colwise() += b_.value.flat();
  }
  if (ctx) {
    ctx->saved.clear();
    ctx->saved.push_back(std::move(cols));
    ctx->saved.push_back(shape_tensor(x.shape()));
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& gy, Ctx& ctx) {
  const Tensor& cols = ctx.saved[0];
  const auto xshape = shape_from_tensor(ctx.saved[1]);
  const std::int64_t n = gy.dim(0);
  const std::int64_t spatial = gy.dim(2) * gy.dim(3);
  const std::int64_t ckk = in_ch_ * k_ * k_;
  auto wmat = w_.value.mat(out_ch_, ckk);
  auto gwmat = w_.grad.mat(out_ch_, ckk);
  auto cmat = cols.mat();
  Tensor gcols({ckk, n * spatial});
  auto gcmat = gcols.mat();
  for (std::int64_t ni = 0; ni < n; ++ni) {
    ConstMatMap gyn(gy.data() + ni * out_ch_ * spatial, out_ch_, spatial);
    gwmat.noalias() += gyn * cmat.middleCols(ni * spatial, spatial).transpose();
    b_.grad.flat() += gyn.rowwise().sum();
    gcmat.middleCols(ni * spatial, spatial).noalias() = wmat.transpose() * gyn;
  }
  Tensor gx(xshape);
  col2im(gcols, k_, stride_, pad_, gx);
  return gx;
}

void Conv2d::freeze_leading_channels(std::int64_t n) {
  const std::int64_t per_ch = in_ch_ * k_ * k_;
  for (std::int64_t co = 0; co < std::min(n, out_ch_); ++co) {
    for (std::int64_t i = 0; i < per_ch; ++i) w_.freeze_entry(co * per_ch + i);
    b_.freeze_entry(co);
  }
}

std::unique_ptr<Layer> Conv2d::clone() const {
  auto l = std::make_unique<Conv2d>(in_ch_, out_ch_, k_, stride_, pad_);
  l->w_ = w_;
  l->b_ = b_;
  return l;
}

// ---------------------------------------------------------------------------
// ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
                                 std::int64_t stride, std::int64_t pad)
    : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride), pad_(pad) {
  w_.name = "w";
  w_.value = Tensor({in_ch_, out_ch_, k_, k_});
  w_.grad = Tensor({in_ch_, out_ch_, k_, k_});
  b_.name = "b";
  b_.value = Tensor({out_ch_});
  b_.grad = Tensor({out_ch_});
}

void ConvTranspose2d::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(out_ch_ * k_ * k_));
  uniform_init(w_.value, bound, rng);
  uniform_init(b_.value, bound, rng);
}

Tensor ConvTranspose2d::forward(const Tensor& x, Ctx* ctx, Mode, Rng*) {
  require_4d(x, "convtranspose2d");
  if (x.dim(1) != in_ch_) throw DimensionError("convtranspose2d: channel mismatch");
  const std::int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = (h - 1) * stride_ + k_ - 2 * pad_;
  const std::int64_t ow = (w - 1) * stride_ + k_ - 2 * pad_;
  if (oh <= 0 || ow <= 0) throw DimensionError("convtranspose2d: output size not positive");
  const std::int64_t okk = out_ch_ * k_ * k_;
  const std::int64_t spatial = h * w;
  Tensor cols({okk, n * spatial});
  auto wmat = w_.value.mat(in_ch_, okk);
  auto cmat = cols.mat();
  for (std::int64_t ni = 0; ni < n; ++ni) {
    ConstMatMap xn(x.data() + ni * in_ch_ * spatial, in_ch_, spatial);
    cmat.middleCols(ni * spatial, spatial).noalias() = wmat.transpose() * xn;
  }
  Tensor y({n, out_ch_, oh, ow});
  col2im(cols, k_, stride_, pad_, y);
  double* yd = y.data();
  for (std::int64_t ni = 0; ni < n; ++ni) {
    for (std::int64_t co = 0; co < out_ch_; ++co) {
      const double bias = b_.value[co];
      double* yc = yd + (ni * out_ch_ + co) * oh * ow;
      for (std::int64_t i = 0; i < oh * ow; ++i) yc[i] += bias;
    }
  }
  if (ctx) {
    ctx->saved.clear();
    ctx->saved.push_back(x);
  }
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& gy, Ctx& ctx) {
  const Tensor& x = ctx.saved[0];
  const std::int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::int64_t okk = out_ch_ * k_ * k_;
  const std::int64_t spatial = h * w;
  Tensor gcols;
  im2col(gy, k_, stride_, pad_, gcols);
  auto wmat = w_.value.mat(in_ch_, okk);
  auto gwmat = w_.grad.mat(in_ch_, okk);
  auto gcmat = gcols.mat();
  Tensor gx({n, in_ch_, h, w});
  for (std::int64_t ni = 0; ni < n; ++ni) {
    ConstMatMap xn(x.data() + ni * in_ch_ * spatial, in_ch_, spatial);
    MatMap gxn(gx.data() + ni * in_ch_ * spatial, in_ch_, spatial);
    gxn.noalias() = wmat * gcmat.middleCols(ni * spatial, spatial);
    gwmat.noalias() += xn * gcmat.middleCols(ni * spatial, spatial).transpose();
  }
  const std::int64_t oh = gy.dim(2), ow = gy.dim(3);
  const double* gyd = gy.data();
  for (std::int64_t ni = 0; ni < n; ++ni) {
    for (std::int64_t co = 0; co < out_ch_; ++co) {
      const double* gc = gyd + (ni * out_ch_ + co) * oh * ow;
      double acc = 0.0;
      for (std::int64_t i = 0; i < oh * ow; ++i) acc += gc[i];
      b_.grad[co] += acc;
    }
  }
  return gx;
}

void ConvTranspose2d::freeze_leading_channels(std::int64_t n) {
  const std::int64_t kk = k_ * k_;
  const std::int64_t nf = std::min(n, out_ch_);
  for (std::int64_t ci = 0; ci < in_ch_; ++ci) {
    for (std::int64_t co = 0; co < nf; ++co) {
      for (std::int64_t i = 0; i < kk; ++i) w_.freeze_entry((ci * out_ch_ + co) * kk + i);
    }
  }
  for (std::int64_t co = 0; co < nf; ++co) b_.freeze_entry(co);
}

std::unique_ptr<Layer> ConvTranspose2d::clone() const {
  auto l = std::make_unique<ConvTranspose2d>(in_ch_, out_ch_, k_, stride_, pad_);
  l->w_ = w_;
  l->b_ = b_;
  return l;
}

// ---------------------------------------------------------------------------
// Activations

Tensor ReLU::forward(const Tensor& x, Ctx* ctx, Mode, Rng*) {
  Tensor y = x;
  for (std::int64_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0.0) y[i] = 0.0;
  }
  if (ctx) {
    ctx->saved.clear();
    ctx->saved.push_back(x);
  }
  return y;
}

Tensor ReLU::backward(const Tensor& gy, Ctx& ctx) {
  const Tensor& x = ctx.saved[0];
  Tensor gx = gy;
  for (std::int64_t i = 0; i < gx.size(); ++i) {
    if (x[i] <= 0.0) gx[i] = 0.0;
  }
  return gx;
}

Tensor LeakyReLU::forward(const Tensor& x, Ctx* ctx, Mode, Rng*) {
  Tensor y = x;
  for (std::int64_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0.0) y[i] *= slope_;
  }
  if (ctx) {
    ctx->saved.clear();
    ctx->saved.push_back(x);
  }
  return y;
}

Tensor LeakyReLU::backward(const Tensor& gy, Ctx& ctx) {
  const Tensor& x = ctx.saved[0];
  Tensor gx = gy;
  for (std::int64_t i = 0; i < gx.size(); ++i) {
    if (x[i] < 0.0) gx[i] *= slope_;
  }
  return gx;
}

Tensor Tanh::forward(const Tensor& x, Ctx* ctx, Mode, Rng*) {
  Tensor y = x;
  for (std::int64_t i = 0; i < y.size(); ++i) y[i] = std::tanh(y[i]);
  if (ctx) {
    ctx->saved.clear();
    ctx->saved.push_back(y);
  }
  return y;
}

Tensor Tanh::backward(const Tensor& gy, Ctx& ctx) {
  const Tensor& y = ctx.saved[0];
  Tensor gx = gy;
  for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] *= 1.0 - y[i] * y[i];
  return gx;
}

Tensor Sigmoid::forward(const Tensor& x, Ctx* ctx, Mode, Rng*) {
  Tensor y = x;
  for (std::int64_t i = 0; i < y.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-y[i]));
  if (ctx) {
    ctx->saved.clear();
    ctx->saved.push_back(y);
  }
  return y;
}

Tensor Sigmoid::backward(const Tensor& gy, Ctx& ctx) {
  const Tensor& y = ctx.saved[0];
  Tensor gx = gy;
  for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] *= y[i] * (1.0 - y[i]);
  return gx;
}

Tensor Softmax::forward(const Tensor& x, Ctx* ctx, Mode, Rng*) {
  if (x.ndim() != 2) throw DimensionError("softmax: expected 2-D input");
  const std::int64_t n = x.dim(0), k = x.dim(1);
  Tensor y({n, k});
  for (std::int64_t r = 0; r < n; ++r) {
    const double* xr = x.data() + r * k;
    double* yr = y.data() + r * k;
    double mx = xr[0];
    for (std::int64_t c = 1; c < k; ++c) mx = std::max(mx, xr[c]);
    double sum = 0.0;
    for (std::int64_t c = 0; c < k; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      sum += yr[c];
    }
    for (std::int64_t c = 0; c < k; ++c) yr[c] /= sum;
  }
  if (ctx) {
    ctx->saved.clear();
    ctx->saved.push_back(y);
  }
  return y;
}

Tensor Softmax::backward(const Tensor& gy, Ctx& ctx) {
  const Tensor& y = ctx.saved[0];
  const std::int64_t n = y.dim(0), k = y.dim(1);
  Tensor gx({n, k});
  for (std::int64_t r = 0; r < n; ++r) {
    const double* yr = y.data() + r * k;
    const double* gr = gy.data() + r * k;
    double dot = 0.0;
    for (std::int64_t c = 0; c < k; ++c) dot += gr[c] * yr[c];
    double* gxr = gx.data() + r * k;
    for (std::int64_t c = 0; c < k; ++c) gxr[c] = yr[c] * (gr[c] - dot);
  }
  return gx;
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(std::int64_t channels, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
  gamma_.name = "gamma";
  gamma_.value = Tensor::full({channels_}, 1.0);
  gamma_.grad = Tensor({channels_});
  beta_.name = "beta";
  beta_.value = Tensor({channels_});
  beta_.grad = Tensor({channels_});
  running_mean_ = Tensor({channels_});
  running_var_ = Tensor::full({channels_}, 1.0);
}

std::vector<std::pair<std::string, Tensor*>> BatchNorm2d::state() {
  return {{"gamma", &gamma_.value},
          {"beta", &beta_.value},
          {"running_mean", &running_mean_},
          {"running_var", &running_var_}};
}

Tensor BatchNorm2d::forward(const Tensor& x, Ctx* ctx, Mode mode, Rng*) {
  if (x.ndim() != 4 && x.ndim() != 2) throw DimensionError("batchnorm2d: expected 2-D or 4-D input");
  if (x.dim(1) != channels_) throw DimensionError("batchnorm2d: channel mismatch");
  const std::int64_t n = x.dim(0);
  const std::int64_t spatial = x.ndim() == 4 ? x.dim(2) * x.dim(3) : 1;
  const std::int64_t m = n * spatial;
  Tensor mean({channels_}), invstd({channels_});
  if (mode == Mode::kTrain) {
    if (m < 2) throw DimensionError("batchnorm2d: train mode needs at least 2 elements per channel");
    Tensor var({channels_});
    for (std::int64_t c = 0; c < channels_; ++c) {
      double acc = 0.0;
      for (std::int64_t ni = 0; ni < n; ++ni) {
        const double* p = x.data() + (ni * channels_ + c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) acc += p[i];
      }
      const double mu = acc / static_cast<double>(m);
      double vacc = 0.0;
      for (std::int64_t ni = 0; ni < n; ++ni) {
        const double* p = x.data() + (ni * channels_ + c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) {
          const double d = p[i] - mu;
          vacc += d * d;
        }
      }
      const double v = vacc / static_cast<double>(m);
      mean[c] = mu;
      var[c] = v;
      invstd[c] = 1.0 / std::sqrt(v + eps_);
      const double unbiased = vacc / static_cast<double>(m - 1);
      running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mu;
      running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * unbiased;
    }
  } else {
    for (std::int64_t c = 0; c < channels_; ++c) {
      mean[c] = running_mean_[c];
      invstd[c] = 1.0 / std::sqrt(running_var_[c] + eps_);
    }
  }
  Tensor xhat(x.shape());
  Tensor y(x.shape());
  for (std::int64_t c = 0; c < channels_; ++c) {
    const double mu = mean[c], is = invstd[c];
    const double g = gamma_.value[c], bt = beta_.value[c];
    for (std::int64_t ni = 0; ni < n; ++ni) {
      const double* xp = x.data() + (ni * channels_ + c) * spatial;
      double* hp = xhat.data() + (ni * channels_ + c) * spatial;
      double* yp = y.data() + (ni * channels_ + c) * spatial;
      for (std::int64_t i = 0; i < spatial; ++i) {
        hp[i] = (xp[i] - mu) * is;
        yp[i] = g * hp[i] + bt;
      }
    }
  }
  if (ctx) {
    ctx->saved.clear();
    ctx->saved.push_back(std::move(xhat));
    ctx->saved.push_back(std::move(invstd));
    ctx->saved.push_back(Tensor::full({1}, mode == Mode::kTrain ? 1.0 : 0.0));
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& gy, Ctx& ctx) {
  const Tensor& xhat = ctx.saved[0];
  const Tensor& invstd = ctx.saved[1];
  const bool train = ctx.saved[2][0] != 0.0;
  const std::int64_t n = gy.dim(0);
  const std::int64_t spatial = gy.ndim() == 4 ? gy.dim(2) * gy.dim(3) : 1;
  const std::int64_t m = n * spatial;
  Tensor gx(gy.shape());
  for (std::int64_t c = 0; c < channels_; ++c) {
    double sum_gy = 0.0, sum_gy_xhat = 0.0;
    for (std::int64_t ni = 0; ni < n; ++ni) {
      const double* gp = gy.data() + (ni * channels_ + c) * spatial;
      const double* hp = xhat.data() + (ni * channels_ + c) * spatial;
      for (std::int64_t i = 0; i < spatial; ++i) {
        sum_gy += gp[i];
        sum_gy_xhat += gp[i] * hp[i];
      }
    }
    gamma_.grad[c] += sum_gy_xhat;
    beta_.grad[c] += sum_gy;
    const double g = gamma_.value[c], is = invstd[c];
    if (train) {
      const double md = static_cast<double>(m);
      for (std::int64_t ni = 0; ni < n; ++ni) {
        const double* gp = gy.data() + (ni * channels_ + c) * spatial;
        const double* hp = xhat.data() + (ni * channels_ + c) * spatial;
        double* op = gx.data() + (ni * channels_ + c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) {
          op[i] = g * is / md * (md * gp[i] - sum_gy - hp[i] * sum_gy_xhat);
        }
      }
    } else {
      for (std::int64_t ni = 0; ni < n; ++ni) {
        const double* gp = gy.data() + (ni * channels_ + c) * spatial;
        double* op = gx.data() + (ni * channels_ + c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) op[i] = g * is * gp[i];
      }
    }
  }
  return gx;
}

void BatchNorm2d::freeze_leading_channels(std::int64_t n) {
  for (std::int64_t c = 0; c < std::min(n, channels_); ++c) {
    gamma_.freeze_entry(c);
    beta_.freeze_entry(c);
  }
}

std::unique_ptr<Layer> BatchNorm2d::clone() const {
  auto l = std::make_unique<BatchNorm2d>(channels_, momentum_, eps_);
  l->gamma_ = gamma_;
  l->beta_ = beta_;
  l->running_mean_ = running_mean_;
  l->running_var_ = running_var_;
  return l;
}

// ---------------------------------------------------------------------------
// Dropout

Tensor Dropout::forward(const Tensor& x, Ctx* ctx, Mode mode, Rng* rng) {
  if (mode == Mode::kEval || p_ <= 0.0) {
    if (ctx) {
      ctx->saved.clear();
      ctx->saved.push_back(Tensor());
    }
    return x;
  }
  if (!rng) throw Error("dropout: train-mode forward needs an RNG");
  const double keep = 1.0 - p_;
  Tensor mask(x.shape());
  Tensor y(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const double m = rng->uniform() < p_ ? 0.0 : 1.0 / keep;
    mask[i] = m;
    y[i] = x[i] * m;
  }
  if (ctx) {
    ctx->saved.clear();
    ctx->saved.push_back(std::move(mask));
  }
  return y;
}

Tensor Dropout::backward(const Tensor& gy, Ctx& ctx) {
  const Tensor& mask = ctx.saved[0];
  if (mask.size() == 0) return gy;
  Tensor gx = gy;
  for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] *= mask[i];
  return gx;
}

// ---------------------------------------------------------------------------
// MaxPool2d

MaxPool2d::MaxPool2d(std::int64_t kernel, std::int64_t stride) : k_(kernel), stride_(stride) {}

Tensor MaxPool2d::forward(const Tensor& x, Ctx* ctx, Mode, Rng*) {
  require_4d(x, "maxpool2d");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = conv_out_size(h, k_, stride_, 0);
  const std::int64_t ow = conv_out_size(w, k_, stride_, 0);
  Tensor y({n, c, oh, ow});
  Tensor arg({n, c, oh, ow});
  for (std::int64_t ni = 0; ni < n; ++ni) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const double* xp = x.data() + (ni * c + ci) * h * w;
      double* yp = y.data() + (ni * c + ci) * oh * ow;
      double* ap = arg.data() + (ni * c + ci) * oh * ow;
      for (std::int64_t yo = 0; yo < oh; ++yo) {
        for (std::int64_t xo = 0; xo < ow; ++xo) {
          double best = -1e300;
          std::int64_t besti = 0;
          for (std::int64_t ki = 0; ki < k_; ++ki) {
            for (std::int64_t kj = 0; kj < k_; ++kj) {
              const std::int64_t iy = yo * stride_ + ki;
              const std::int64_t ix = xo * stride_ + kj;
              const std::int64_t idx = iy * w + ix;
              if (xp[idx] > best) {
                best = xp[idx];
                besti = idx;
              }
            }
          }
          yp[yo * ow + xo] = best;
          ap[yo * ow + xo] = static_cast<double>(besti);
        }
      }
    }
  }
  if (ctx) {
    ctx->saved.clear();
    ctx->saved.push_back(std::move(arg));
    ctx->saved.push_back(shape_tensor(x.shape()));
  }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& gy, Ctx& ctx) {
  const Tensor& arg = ctx.saved[0];
  const auto xshape = shape_from_tensor(ctx.saved[1]);
  const std::int64_t n = gy.dim(0), c = gy.dim(1);
  const std::int64_t spatial_out = gy.dim(2) * gy.dim(3);
  const std::int64_t spatial_in = xshape[2] * xshape[3];
  Tensor gx(xshape);
  for (std::int64_t ni = 0; ni < n; ++ni) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const double* gp = gy.data() + (ni * c + ci) * spatial_out;
      const double* ap = arg.data() + (ni * c + ci) * spatial_out;
      double* op = gx.data() + (ni * c + ci) * spatial_in;
      for (std::int64_t i = 0; i < spatial_out; ++i) {
        op[static_cast<std::int64_t>(ap[i])] += gp[i];
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Shape adapters

Tensor Flatten::forward(const Tensor& x, Ctx* ctx, Mode, Rng*) {
  require_4d(x, "flatten");
  if (ctx) {
    ctx->saved.clear();
    ctx->saved.push_back(shape_tensor(x.shape()));
  }
  return x.reshaped({x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
}

Tensor Flatten::backward(const Tensor& gy, Ctx& ctx) {
  return gy.reshaped(shape_from_tensor(ctx.saved[0]));
}

Tensor Reshape::forward(const Tensor& x, Ctx* ctx, Mode, Rng*) {
  if (x.ndim() != 2 || x.dim(1) != c_ * h_ * w_) throw DimensionError("reshape: input shape mismatch");
  if (ctx) ctx->saved.clear();
  return x.reshaped({x.dim(0), c_, h_, w_});
}

Tensor Reshape::backward(const Tensor& gy, Ctx&) {
  return gy.reshaped({gy.dim(0), c_ * h_ * w_});
}

}  // namespace ntl::nn
