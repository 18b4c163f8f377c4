#pragma once

#include <cstdint>

#include "ntl/nn/sequential.hpp"
#include "ntl/tensor.hpp"

namespace ntl::probe {

struct ProbeConfig {
  std::int64_t hidden = 64;
  std::int64_t epochs = 60;
  std::int64_t batch_size = 128;
  double learning_rate = 1e-3;
  double train_fraction = 0.7;
  double eps = 1e-6;  // output clamp: probabilities stay inside (eps, 1-eps)
};

// Two binary domain discriminators: theta0 scores membership in the n=0
// (source) sample, theta1 in the n=1 (auxiliary) sample.
struct ProbeBundle {
  nn::Sequential theta0;
  nn::Sequential theta1;
  ProbeConfig cfg;

  // Clamped probability outputs for a (N, d) batch, shape (N).
  Tensor score0(const Tensor& z);
  Tensor score1(const Tensor& z);
};

// Trains both probes on equal-count samples (the larger side is subsampled,
// seeded). Rows of z0/z1 are representation vectors.
ProbeBundle train_probes(const Tensor& z0, const Tensor& z1, std::uint64_t seed,
                         const ProbeConfig& cfg = {});

// 0.5 * mean log(2*theta0(z0)) + 0.5 * mean log(2*theta1(z1)) on held-out
// rows; bounded above by log 2 thanks to the output clamp.
double estimate_mi(ProbeBundle& bundle, const Tensor& z0_held, const Tensor& z1_held);

struct MiEstimate {
  double value = 0.0;
  double clipped = 0.0;  // max(0, value)
};

// Convenience wrapper: seeded 70/30 split of both sides, probe training on
// the first part, estimate on the held-out part.
MiEstimate probe_domain_mi(const Tensor& z0, const Tensor& z1, std::uint64_t seed,
                           const ProbeConfig& cfg = {});

}  // namespace ntl::probe
