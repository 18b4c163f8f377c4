#include "ntl/objective.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ntl/errors.hpp"
#include "ntl/mi_probe.hpp"
#include "ntl/nn/adam.hpp"

using json = nlohmann::ordered_json;

namespace ntl::objective {

namespace {
constexpr double kProbEps = 1e-12;
}

void NtlConfig::validate() const {
  std::string bad;
  if (!(alpha > 0.0)) bad += "alpha ";
  if (!(beta > 0.0)) bad += "beta ";
  if (!(alpha_prime > 0.0)) bad += "alpha_prime ";
  if (!(beta_prime > 0.0)) bad += "beta_prime ";
  if (!(learning_rate > 0.0)) bad += "learning_rate ";
  if (batch_size < 1) bad += "batch_size ";
  if (epochs < 0) bad += "epochs ";
  if (probe_sample_count < 2) bad += "probe_sample_count ";
  if (!bad.empty()) throw ConfigError("ntl config: invalid fields: " + bad);
  kernel_cfg.validate();
}

double kl_class_loss(const Tensor& probs, const std::vector<std::uint16_t>& labels) {
  if (probs.ndim() != 2) throw DimensionError("kl_class_loss: probs must be 2-D");
  const std::int64_t n = probs.dim(0), k = probs.dim(1);
  if (n != static_cast<std::int64_t>(labels.size())) {
    throw DimensionError("kl_class_loss: label count mismatch");
  }
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = probs.data() + i * k;
    double sum = 0.0;
    for (std::int64_t c = 0; c < k; ++c) {
      if (row[c] < -1e-9) throw Error("kl_class_loss: negative probability entry");
      sum += row[c];
    }
    if (std::abs(sum - 1.0) > 1e-5) throw Error("kl_class_loss: row does not sum to 1");
    const auto y = labels[static_cast<std::size_t>(i)];
    if (y >= k) throw DimensionError("kl_class_loss: label out of range");
    acc += -std::log(std::max(row[y], kProbEps));
  }
  return acc / static_cast<double>(n);
}

Tensor kl_class_grad(const Tensor& probs, const std::vector<std::uint16_t>& labels, double weight) {
  const std::int64_t n = probs.dim(0), k = probs.dim(1);
  Tensor g({n, k});
  const double scale = weight / static_cast<double>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    const double p = probs.at2(i, y);
    if (p > kProbEps) g.at2(i, y) = -scale / p;
  }
  return g;
}

double ntl_star_loss(double l_s, double l_a, const NtlConfig& cfg) {
  return l_s - std::min(cfg.beta, cfg.alpha * l_a);
}

LossParts ntl_compose(double l_s, double l_a, double raw_mmd, const NtlConfig& cfg) {
  LossParts parts;
  parts.l_s = l_s;
  parts.l_a = l_a;
  parts.l_dis = std::min(cfg.beta_prime, cfg.alpha_prime * raw_mmd);
  parts.total = l_s - std::min(cfg.beta, cfg.alpha * l_a * parts.l_dis);
  return parts;
}

LossParts ntl_loss(const Batch& source, const Batch& aux, models::ModelBundle& model,
                   const NtlConfig& cfg) {
  return detail::ntl_loss_backward(source, aux, model, cfg, false, nn::Mode::kEval, nullptr);
}

namespace detail {

LossParts ntl_loss_backward(const Batch& source, const Batch& aux, models::ModelBundle& model,
                            const NtlConfig& cfg, bool accumulate_grads, nn::Mode mode, Rng* rng,
                            const std::vector<double>* fixed_bandwidths,
                            double source_grad_weight) {
  if (source.images.dim(0) < 1 || aux.images.dim(0) < 1) {
    throw DimensionError("ntl_loss: empty batch");
  }
  if (source.images.dim(0) != aux.images.dim(0)) {
    throw DimensionError("ntl_loss: source and aux batches must have equal size");
  }
  auto fwd_src = model.forward_train(source.images, rng, mode);
  auto fwd_aux = model.forward_train(aux.images, rng, mode);

  LossParts parts;
  parts.l_s = kl_class_loss(fwd_src.probs, source.labels);
  parts.l_a = kl_class_loss(fwd_aux.probs, aux.labels);

  Tensor gz_src, gz_aux;
  double mmd_value;
  if (accumulate_grads) {
    if (fixed_bandwidths) {
      mmd_value = kernels::mmd_fixed_grad(fwd_src.z, fwd_aux.z, *fixed_bandwidths, &gz_src, &gz_aux);
    } else {
      mmd_value = kernels::mmd_grad(fwd_src.z, fwd_aux.z, cfg.kernel_cfg, &gz_src, &gz_aux);
    }
  } else {
    mmd_value = fixed_bandwidths ? kernels::mmd_fixed(fwd_src.z, fwd_aux.z, *fixed_bandwidths)
                                 : kernels::mmd(fwd_src.z, fwd_aux.z, cfg.kernel_cfg);
  }
  parts = ntl_compose(parts.l_s, parts.l_a, mmd_value, cfg);

  if (!accumulate_grads) return parts;

  const bool outer_clip = cfg.alpha * parts.l_a * parts.l_dis < cfg.beta;
  const bool inner_clip = cfg.alpha_prime * mmd_value < cfg.beta_prime;
  const double d_l_a = outer_clip ? -cfg.alpha * parts.l_dis : 0.0;
  const double d_mmd = (outer_clip && inner_clip) ? -cfg.alpha * parts.l_a * cfg.alpha_prime : 0.0;

  Tensor gprobs_src = kl_class_grad(fwd_src.probs, source.labels, source_grad_weight);
  Tensor gprobs_aux = kl_class_grad(fwd_aux.probs, aux.labels, d_l_a);

  Tensor gz_src_total = model.classifier.backward(gprobs_src, fwd_src.cls_tape);
  Tensor gz_aux_total = model.classifier.backward(gprobs_aux, fwd_aux.cls_tape);
  if (d_mmd != 0.0) {
    gz_src.scale_(d_mmd);
    gz_aux.scale_(d_mmd);
    gz_src_total.add_(gz_src);
    gz_aux_total.add_(gz_aux);
  }
  model.extractor.backward(gz_src_total, fwd_src.ext_tape);
  model.extractor.backward(gz_aux_total, fwd_aux.ext_tape);
  return parts;
}

}  // namespace detail

namespace {

void require_compatible(const domains::DomainDataset& a, const domains::DomainDataset& b,
                        const char* who) {
  if (a.num_classes != b.num_classes || a.channels != b.channels || a.height != b.height ||
      a.width != b.width) {
    throw ConfigError(std::string(who) + ": incompatible domains (" + a.name + " vs " + b.name + ")");
  }
}

std::vector<std::int64_t> slice(const std::vector<std::int64_t>& perm, std::int64_t start,
                                std::int64_t count) {
  return {perm.begin() + start, perm.begin() + start + count};
}

double probe_mi_for_model(models::ModelBundle& model, const domains::DomainDataset& src,
                          const domains::DomainDataset& aux, std::int64_t count,
                          std::uint64_t seed) {
  Tensor z0 = extract_representations(model, src, count, Rng::derive(seed, 1));
  Tensor z1 = extract_representations(model, aux, count, Rng::derive(seed, 2));
  return probe::probe_domain_mi(z0, z1, Rng::derive(seed, 3)).value;
}

}  // namespace

TrainResult train_target_specified(models::ModelBundle& model, const domains::DomainDataset& source,
                                   const domains::DomainDataset& aux, const NtlConfig& cfg,
                                   const domains::DomainDataset* eval_source,
                                   const domains::DomainDataset* eval_aux) {
  cfg.validate();
  require_compatible(source, aux, "train_target_specified");
  TrainResult result;
  if (cfg.epochs == 0) return result;
  const std::int64_t steps = std::min(source.count(), aux.count()) / cfg.batch_size;
  if (steps < 1) throw ConfigError("train_target_specified: batch_size exceeds dataset size");

  nn::Adam adam(model.params(), {.lr = cfg.learning_rate});
  const domains::DomainDataset& es = eval_source ? *eval_source : source;
  const domains::DomainDataset& ea = eval_aux ? *eval_aux : aux;

  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(Rng::derive(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    Rng drop_rng(Rng::derive(cfg.seed, 5000 + static_cast<std::uint64_t>(epoch)));
    auto perm_src = shuffle_rng.permutation(source.count());
    auto perm_aux = shuffle_rng.permutation(aux.count());
    EpochRecord rec;
    rec.epoch = epoch + 1;
    for (std::int64_t s = 0; s < steps; ++s) {
      const auto src_idx = slice(perm_src, s * cfg.batch_size, cfg.batch_size);
      const auto aux_idx = slice(perm_aux, s * cfg.batch_size, cfg.batch_size);
      Batch bs{domains::to_unit_tensor(source, src_idx), domains::gather_labels(source, src_idx)};
      Batch ba{domains::to_unit_tensor(aux, aux_idx), domains::gather_labels(aux, aux_idx)};
      const LossParts parts =
          detail::ntl_loss_backward(bs, ba, model, cfg, true, nn::Mode::kTrain, &drop_rng);
      adam.step();
      model.zero_grad();
      ++model.train_step_count;
      rec.l_s += parts.l_s;
      rec.l_a += parts.l_a;
      rec.l_dis += parts.l_dis;
      rec.total += parts.total;
    }
    const double ds = static_cast<double>(steps);
    rec.l_s /= ds;
    rec.l_a /= ds;
    rec.l_dis /= ds;
    rec.total /= ds;
    rec.source_acc = evaluate_accuracy(model, es);
    rec.aux_acc = evaluate_accuracy(model, ea);
    if (cfg.probe_mi) {
      rec.mi = probe_mi_for_model(model, es, ea, cfg.probe_sample_count,
                                  Rng::derive(cfg.seed, 9000 + static_cast<std::uint64_t>(epoch)));
    }
    result.history.push_back(rec);
  }
  return result;
}

TrainResult train_supervised(models::ModelBundle& model, const domains::DomainDataset& data,
                             const SupervisedOptions& opt,
                             const domains::DomainDataset* eval_source,
                             const domains::DomainDataset* eval_aux) {
  if (opt.learning_rate <= 0.0 || opt.batch_size < 1 || opt.epochs < 0) {
    throw ConfigError("train_supervised: invalid options");
  }
  TrainResult result;
  if (opt.epochs == 0) return result;
  const std::int64_t steps = data.count() / opt.batch_size;
  if (steps < 1) throw ConfigError("train_supervised: batch_size exceeds dataset size");

  nn::Adam adam(model.params(), {.lr = opt.learning_rate});
  if (opt.lr_scales) {
    for (auto* p : model.params()) {
      if (auto it = opt.lr_scales->find(p); it != opt.lr_scales->end()) {
        adam.set_lr_scale(p, it->second);
      }
    }
  }
  const domains::DomainDataset& es = eval_source ? *eval_source : data;

  for (std::int64_t epoch = 0; epoch < opt.epochs; ++epoch) {
    Rng shuffle_rng(Rng::derive(opt.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    Rng drop_rng(Rng::derive(opt.seed, 5000 + static_cast<std::uint64_t>(epoch)));
    auto perm = shuffle_rng.permutation(data.count());
    EpochRecord rec;
    rec.epoch = epoch + 1;
    for (std::int64_t s = 0; s < steps; ++s) {
      const auto idx = slice(perm, s * opt.batch_size, opt.batch_size);
      Tensor images = domains::to_unit_tensor(data, idx);
      const auto labels = domains::gather_labels(data, idx);
      auto fwd = model.forward_train(images, &drop_rng, nn::Mode::kTrain);
      const double loss = kl_class_loss(fwd.probs, labels);
      Tensor gprobs = kl_class_grad(fwd.probs, labels, 1.0);
      model.backward(gprobs, fwd);
      adam.step();
      model.zero_grad();
      ++model.train_step_count;
      rec.l_s += loss;
      rec.total += loss;
    }
    rec.l_s /= static_cast<double>(steps);
    rec.total /= static_cast<double>(steps);
    rec.source_acc = evaluate_accuracy(model, es);
    if (eval_aux) rec.aux_acc = evaluate_accuracy(model, *eval_aux);
    result.history.push_back(rec);
  }
  return result;
}

double evaluate_accuracy(models::ModelBundle& model, const domains::DomainDataset& data,
                         std::int64_t eval_batch) {
  const std::int64_t n = data.count();
  if (n < 1) throw ConfigError("evaluate_accuracy: empty dataset");
  std::int64_t correct = 0;
  std::vector<std::int64_t> idx;
  for (std::int64_t start = 0; start < n; start += eval_batch) {
    const std::int64_t count = std::min(eval_batch, n - start);
    idx.resize(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    Tensor images = domains::to_unit_tensor(data, idx);
    auto [z, probs] = model.forward(images);
    const std::int64_t k = probs.dim(1);
    for (std::int64_t i = 0; i < count; ++i) {
      const double* row = probs.data() + i * k;
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < k; ++c) {
        if (row[c] > row[best]) best = c;
      }
      if (best == data.labels[static_cast<std::size_t>(start + i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

Tensor extract_representations(models::ModelBundle& model, const domains::DomainDataset& data,
                               std::int64_t count, std::uint64_t seed) {
  Rng rng(seed);
  auto perm = rng.permutation(data.count());
  const std::int64_t take = std::min(count, data.count());
  Tensor out({take, model.spec.repr_dim});
  constexpr std::int64_t kChunk = 256;
  for (std::int64_t start = 0; start < take; start += kChunk) {
    const std::int64_t n = std::min(kChunk, take - start);
    const std::vector<std::int64_t> idx(perm.begin() + start, perm.begin() + start + n);
    Tensor images = domains::to_unit_tensor(data, idx);
    auto [z, probs] = model.forward(images);
    std::copy(z.data(), z.data() + n * model.spec.repr_dim, out.data() + start * model.spec.repr_dim);
  }
  return out;
}

std::string history_to_jsonl(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  for (const auto& r : history) {
    json j;
    j["epoch"] = r.epoch;
    j["l_s"] = r.l_s;
    j["l_a"] = r.l_a;
    j["l_dis"] = r.l_dis;
    j["total"] = r.total;
    j["source_acc"] = r.source_acc;
    j["aux_acc"] = r.aux_acc;
    if (r.mi) j["mi"] = *r.mi;
    os << j.dump() << "\n";
  }
  return os.str();
}

}  // namespace ntl::objective
