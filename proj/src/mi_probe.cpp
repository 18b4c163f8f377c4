#include "ntl/mi_probe.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "ntl/errors.hpp"
#include "ntl/nn/adam.hpp"
#include "ntl/rng.hpp"

namespace ntl::probe {

namespace {

nn::Sequential make_probe_net(std::int64_t in_dim, std::int64_t hidden, Rng& rng) {
  nn::Sequential s;
  s.add(std::make_unique<nn::Linear>(in_dim, hidden));
  s.add(std::make_unique<nn::ReLU>());
  s.add(std::make_unique<nn::Linear>(hidden, hidden));
  s.add(std::make_unique<nn::ReLU>());
  s.add(std::make_unique<nn::Linear>(hidden, 1));
  s.add(std::make_unique<nn::Sigmoid>());
  s.init(rng);
  return s;
}

Tensor gather_rows(const Tensor& z, const std::vector<std::int64_t>& idx) {
  const std::int64_t d = z.dim(1);
  Tensor out({static_cast<std::int64_t>(idx.size()), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy(z.data() + idx[i] * d, z.data() + (idx[i] + 1) * d,
              out.data() + static_cast<std::int64_t>(i) * d);
  }
  return out;
}

// One discriminator trained to score `pos` rows as 1 and `neg` rows as 0.
void train_one(nn::Sequential& net, const Tensor& pos, const Tensor& neg, const ProbeConfig& cfg,
               Rng& rng) {
  nn::Adam adam(net.params(), {.lr = cfg.learning_rate});
  const std::int64_t n = pos.dim(0);
  const std::int64_t batch = std::min(cfg.batch_size, n);
  const std::int64_t steps = n / batch;
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto perm_pos = rng.permutation(n);
    auto perm_neg = rng.permutation(n);
    for (std::int64_t s = 0; s < steps; ++s) {
      const std::vector<std::int64_t> pi(perm_pos.begin() + s * batch,
                                         perm_pos.begin() + (s + 1) * batch);
      const std::vector<std::int64_t> ni(perm_neg.begin() + s * batch,
                                         perm_neg.begin() + (s + 1) * batch);
      Tensor bp = gather_rows(pos, pi);
      Tensor bn = gather_rows(neg, ni);
      nn::Tape tp, tn;
      Tensor pp = net.forward(bp, &tp, nn::Mode::kTrain, &rng);
      Tensor pn = net.forward(bn, &tn, nn::Mode::kTrain, &rng);
      // loss = 0.5 mean[-log p(pos)] + 0.5 mean[-log(1 - p(neg))], with the
      // clamp making the loss flat (zero gradient) outside (eps, 1-eps).
      Tensor gp(pp.shape()), gn(pn.shape());
      const double scale = 0.5 / static_cast<double>(batch);
      for (std::int64_t i = 0; i < batch; ++i) {
        const double p = pp[i];
        if (p > cfg.eps && p < 1.0 - cfg.eps) gp[i] = -scale / p;
        const double q = pn[i];
        if (q > cfg.eps && q < 1.0 - cfg.eps) gn[i] = scale / (1.0 - q);
      }
      net.backward(gp, tp);
      net.backward(gn, tn);
      adam.step();
      net.zero_grad();
    }
  }
}

Tensor clamp_scores(Tensor s, double eps) {
  for (std::int64_t i = 0; i < s.size(); ++i) s[i] = std::clamp(s[i], eps, 1.0 - eps);
  return s;
}

}  // namespace

Tensor ProbeBundle::score0(const Tensor& z) {
  Tensor p = theta0.forward(z, nullptr, nn::Mode::kEval);
  return clamp_scores(p.reshaped({p.dim(0)}), cfg.eps);
}

Tensor ProbeBundle::score1(const Tensor& z) {
  Tensor p = theta1.forward(z, nullptr, nn::Mode::kEval);
  return clamp_scores(p.reshaped({p.dim(0)}), cfg.eps);
}

ProbeBundle train_probes(const Tensor& z0, const Tensor& z1, std::uint64_t seed,
                         const ProbeConfig& cfg) {
  if (z0.ndim() != 2 || z1.ndim() != 2 || z0.dim(0) < 1 || z1.dim(0) < 1) {
    throw DimensionError("train_probes: need non-empty 2-D representation batches");
  }
  if (z0.dim(1) != z1.dim(1)) throw DimensionError("train_probes: dimension mismatch");
  Rng rng(Rng::derive(seed, 0x9B0));
  // Equal counts: subsample the larger side.
  const std::int64_t n = std::min(z0.dim(0), z1.dim(0));
  auto pick = [&rng, n](const Tensor& z) {
    if (z.dim(0) == n) return z;
    auto perm = rng.permutation(z.dim(0));
    perm.resize(static_cast<std::size_t>(n));
    return gather_rows(z, perm);
  };
  Tensor a = pick(z0);
  Tensor b = pick(z1);
  ProbeBundle bundle;
  bundle.cfg = cfg;
  bundle.theta0 = make_probe_net(z0.dim(1), cfg.hidden, rng);
  bundle.theta1 = make_probe_net(z0.dim(1), cfg.hidden, rng);
  train_one(bundle.theta0, a, b, cfg, rng);
  train_one(bundle.theta1, b, a, cfg, rng);
  return bundle;
}

double estimate_mi(ProbeBundle& bundle, const Tensor& z0_held, const Tensor& z1_held) {
  Tensor s0 = bundle.score0(z0_held);
  Tensor s1 = bundle.score1(z1_held);
  double acc0 = 0.0, acc1 = 0.0;
  for (std::int64_t i = 0; i < s0.size(); ++i) acc0 += std::log(2.0 * s0[i]);
  for (std::int64_t i = 0; i < s1.size(); ++i) acc1 += std::log(2.0 * s1[i]);
  return 0.5 * acc0 / static_cast<double>(s0.size()) + 0.5 * acc1 / static_cast<double>(s1.size());
}

MiEstimate probe_domain_mi(const Tensor& z0, const Tensor& z1, std::uint64_t seed,
                           const ProbeConfig& cfg) {
  if (z0.dim(0) < 4 || z1.dim(0) < 4) {
    throw DimensionError("probe_domain_mi: need at least 4 rows per side");
  }
  Rng rng(Rng::derive(seed, 0x51));
  auto split = [&rng, &cfg](const Tensor& z) {
    auto perm = rng.permutation(z.dim(0));
    const auto cut = std::max<std::int64_t>(
        1, std::min<std::int64_t>(z.dim(0) - 1,
                                  static_cast<std::int64_t>(cfg.train_fraction *
                                                            static_cast<double>(z.dim(0)))));
    std::vector<std::int64_t> tr(perm.begin(), perm.begin() + cut);
    std::vector<std::int64_t> he(perm.begin() + cut, perm.end());
    return std::make_pair(gather_rows(z, tr), gather_rows(z, he));
  };
  auto [tr0, he0] = split(z0);
  auto [tr1, he1] = split(z1);
  ProbeBundle bundle = train_probes(tr0, tr1, Rng::derive(seed, 0x52), cfg);
  MiEstimate e;
  e.value = estimate_mi(bundle, he0, he1);
  e.clipped = std::max(0.0, e.value);
  return e;
}

}  // namespace ntl::probe
