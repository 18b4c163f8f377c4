#pragma once

#include <vector>

#include "ntl/tensor.hpp"

namespace ntl::kernels {

struct KernelConfig {
  double mul = 2.0;    // bandwidth ratio between adjacent kernels
  std::int64_t num = 5;  // number of kernels in the ladder
  void validate() const;
};

// Bandwidth ladder from the joint batch (rows are feature vectors): the base
// bandwidth is the sum of all squared pairwise distances (self-pairs
// included) divided by n^2 - n, and kernel i uses base * mul^(i - floor(num/2)).
// Returned ascending. Throws DegenerateBandwidthError when the joint batch
// has fewer than two rows or zero spread.
std::vector<double> bandwidths(const Tensor& joint, const KernelConfig& cfg);

// Squared-MMD V-statistic between row sets `a` (m x d) and `b` (n x d) under
// the summed Gaussian kernel k(u, w) = sum_bw exp(-||u - w||^2 / bw). The
// bandwidth ladder is computed from the concatenated batch and treated as a
// constant (no gradient flows through it).
double mmd(const Tensor& a, const Tensor& b, const KernelConfig& cfg);

// Same statistic with a caller-supplied ladder; used by gradient checks.
double mmd_fixed(const Tensor& a, const Tensor& b, const std::vector<double>& bw);

// Value plus gradients with respect to the rows of `a` and `b` (either output
// may be null). Bandwidths are constants.
double mmd_grad(const Tensor& a, const Tensor& b, const KernelConfig& cfg, Tensor* ga, Tensor* gb);
double mmd_fixed_grad(const Tensor& a, const Tensor& b, const std::vector<double>& bw, Tensor* ga,
                      Tensor* gb);

}  // namespace ntl::kernels
