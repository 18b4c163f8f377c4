#include "ntl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ntl/errors.hpp"

namespace ntl::kernels {

namespace {

void require_rows(const Tensor& t, const char* who) {
  if (t.ndim() != 2 || t.dim(0) < 1) {
    throw DimensionError(std::string(who) + ": expected a non-empty 2-D row batch");
  }
}

// D(i, j) = ||x_i - y_j||^2, clamped at zero against round-off.
RowMat pairwise_sqdist(const Tensor& x, const Tensor& y) {
  auto xm = x.mat();
  auto ym = y.mat();
  RowMat d = -2.0 * (xm * ym.transpose());
  const Eigen::VectorXd xs = xm.rowwise().squaredNorm();
  const Eigen::VectorXd ys = ym.rowwise().squaredNorm();
  d.colwise() += xs;
  d.rowwise() += ys.transpose();
  return d.cwiseMax(0.0);
}

// Sum over the ladder of exp(-d/bw), elementwise over a distance matrix.
RowMat kernel_sum(const RowMat& d, const std::vector<double>& bw) {
  RowMat k = RowMat::Zero(d.rows(), d.cols());
  for (const double b : bw) k += (-d / b).array().exp().matrix();
  return k;
}

// Sum over the ladder of exp(-d/bw) / bw (weight matrix for gradients).
RowMat kernel_weight(const RowMat& d, const std::vector<double>& bw) {
  RowMat k = RowMat::Zero(d.rows(), d.cols());
  for (const double b : bw) k += ((-d / b).array().exp() / b).matrix();
  return k;
}

}  // namespace

void KernelConfig::validate() const {
  std::string bad;
  if (num < 1) bad += "num ";
  if (!(mul > 0.0)) bad += "mul ";
  if (!bad.empty()) throw ConfigError("kernel config: invalid fields: " + bad);
}

std::vector<double> bandwidths(const Tensor& joint, const KernelConfig& cfg) {
  cfg.validate();
  require_rows(joint, "bandwidths");
  const std::int64_t n = joint.dim(0);
  if (n < 2) throw DegenerateBandwidthError("bandwidths: joint batch needs at least 2 rows");
  const RowMat d = pairwise_sqdist(joint, joint);
  const double total = d.sum();
  const double base = total / static_cast<double>(n * n - n);
  if (base <= 0.0) {
    throw DegenerateBandwidthError("bandwidths: joint batch has zero pairwise spread");
  }
  std::vector<double> bw(static_cast<std::size_t>(cfg.num));
  const std::int64_t mid = cfg.num / 2;
  for (std::int64_t i = 0; i < cfg.num; ++i) {
    bw[static_cast<std::size_t>(i)] = base * std::pow(cfg.mul, static_cast<double>(i - mid));
  }
  std::sort(bw.begin(), bw.end());
  return bw;
}

namespace {

std::vector<double> joint_bandwidths(const Tensor& a, const Tensor& b, const KernelConfig& cfg) {
  require_rows(a, "mmd");
  require_rows(b, "mmd");
  if (a.dim(1) != b.dim(1)) throw DimensionError("mmd: feature dimension mismatch");
  const std::int64_t m = a.dim(0), n = b.dim(0), d = a.dim(1);
  Tensor joint({m + n, d});
  std::copy(a.data(), a.data() + m * d, joint.data());
  std::copy(b.data(), b.data() + n * d, joint.data() + m * d);
  return bandwidths(joint, cfg);
}

}  // namespace

double mmd_fixed(const Tensor& a, const Tensor& b, const std::vector<double>& bw) {
  return mmd_fixed_grad(a, b, bw, nullptr, nullptr);
}

double mmd(const Tensor& a, const Tensor& b, const KernelConfig& cfg) {
  return mmd_fixed(a, b, joint_bandwidths(a, b, cfg));
}

double mmd_grad(const Tensor& a, const Tensor& b, const KernelConfig& cfg, Tensor* ga, Tensor* gb) {
  return mmd_fixed_grad(a, b, joint_bandwidths(a, b, cfg), ga, gb);
}

double mmd_fixed_grad(const Tensor& a, const Tensor& b, const std::vector<double>& bw, Tensor* ga,
                      Tensor* gb) {
  require_rows(a, "mmd");
  require_rows(b, "mmd");
  if (a.dim(1) != b.dim(1)) throw DimensionError("mmd: feature dimension mismatch");
  if (bw.empty()) throw DegenerateBandwidthError("mmd: empty bandwidth ladder");
  const double m = static_cast<double>(a.dim(0));
  const double n = static_cast<double>(b.dim(0));
  const RowMat daa = pairwise_sqdist(a, a);
  const RowMat dbb = pairwise_sqdist(b, b);
  const RowMat dab = pairwise_sqdist(a, b);
  const RowMat kaa = kernel_sum(daa, bw);
  const RowMat kbb = kernel_sum(dbb, bw);
  const RowMat kab = kernel_sum(dab, bw);
  const double value = kaa.sum() / (m * m) - 2.0 * kab.sum() / (m * n) + kbb.sum() / (n * n);
  if (ga) {
    const RowMat waa = kernel_weight(daa, bw);
    const RowMat wab = kernel_weight(dab, bw);
    *ga = Tensor(a.shape());
    auto am = a.mat();
    auto bm = b.mat();
    auto g = ga->mat();
    // d/da_i of (1/m^2) sum_jk k(a_j, a_k): each off-diagonal pair contributes
    // twice, the diagonal contributes zero because the distance is zero.
    g.noalias() = (-2.0 * 2.0 / (m * m)) *
                  (waa.rowwise().sum().asDiagonal() * am - waa * am);
    g.noalias() += (4.0 / (m * n)) * (wab.rowwise().sum().asDiagonal() * am - wab * bm);
  }
  if (gb) {
    const RowMat wbb = kernel_weight(dbb, bw);
    const RowMat wab = kernel_weight(dab, bw);
    *gb = Tensor(b.shape());
    auto am = a.mat();
    auto bm = b.mat();
    auto g = gb->mat();
    g.noalias() = (-2.0 * 2.0 / (n * n)) *
                  (wbb.rowwise().sum().asDiagonal() * bm - wbb * bm);
    g.noalias() += (4.0 / (m * n)) *
                   (wab.colwise().sum().asDiagonal() * bm - wab.transpose() * am);
  }
  return value;
}

}  // namespace ntl::kernels
