#include "ntl/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "ntl/errors.hpp"
#include "ntl/objective.hpp"

namespace ntl::attacks {

namespace {

constexpr std::uint64_t kSubsetStream = 0xA77;
constexpr std::uint64_t kTrainStream = 0xF7;
constexpr std::uint64_t kReinitStream = 0x27A1;
constexpr std::uint64_t kPoolStream = 0xA0;
constexpr std::uint64_t kPoisonStream = 0xB0;

objective::SupervisedOptions train_options(const AttackConfig& cfg) {
  objective::SupervisedOptions opt;
  opt.learning_rate = cfg.learning_rate;
  opt.batch_size = cfg.batch_size;
  opt.epochs = cfg.epochs;
  opt.seed = Rng::derive(cfg.seed, kTrainStream);
  return opt;
}

std::vector<std::uint16_t> predict_labels(models::ModelBundle& model,
                                          const domains::DomainDataset& data,
                                          const std::vector<std::int64_t>& idx) {
  std::vector<std::uint16_t> out(idx.size());
  const std::int64_t chunk = 256;
  for (std::size_t start = 0; start < idx.size(); start += chunk) {
    const std::size_t m = std::min<std::size_t>(chunk, idx.size() - start);
    const std::vector<std::int64_t> part(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                         idx.begin() + static_cast<std::ptrdiff_t>(start + m));
    const Tensor images = domains::to_unit_tensor(data, part);
    auto [z, probs] = model.forward(images);
    const std::int64_t k = probs.dim(1);
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = probs.data() + static_cast<std::int64_t>(i) * k;
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < k; ++c) {
        if (row[c] > row[best]) best = c;
      }
      out[start + i] = static_cast<std::uint16_t>(best);
    }
  }
  return out;
}

void stamp_image(std::uint8_t* img, std::int64_t channels, std::int64_t height, std::int64_t width,
                 std::int64_t side) {
  const std::int64_t s = std::min({side, height, width});
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t y = 0; y < s; ++y) {
      for (std::int64_t x = 0; x < s; ++x) {
        img[(c * height + y) * width + x] = 255;
      }
    }
  }
}

models::ModelBundle ftal_like(const models::ModelBundle& model,
                              const domains::DomainDataset& train_data, const AttackConfig& cfg) {
  models::ModelBundle attacked = model.clone();
  objective::train_supervised(attacked, train_data, train_options(cfg));
  return attacked;
}

// Diagonal Fisher from squared gradients of the classification loss, averaged
// over attacker batches, mapped to per-entry learning-rate scales 1/(1+λF).
std::unordered_map<const nn::Param*, Tensor> fisher_lr_scales(models::ModelBundle& model,
                                                              const domains::DomainDataset& data,
                                                              const AttackConfig& cfg) {
  const std::int64_t n = data.count();
  const std::int64_t bsz = std::min<std::int64_t>(cfg.batch_size, n);
  const std::int64_t batches = n / bsz;
  if (batches < 1) throw ConfigError("ewc: attacker data smaller than one batch");
  auto params = model.params();
  std::unordered_map<const nn::Param*, Tensor> fisher;
  for (auto* p : params) fisher.emplace(p, Tensor(p->value.shape()));
  model.zero_grad();
  for (std::int64_t b = 0; b < batches; ++b) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(bsz));
    std::iota(idx.begin(), idx.end(), b * bsz);
    const Tensor images = domains::to_unit_tensor(data, idx);
    const auto labels = domains::gather_labels(data, idx);
    auto fwd = model.forward_train(images, nullptr, nn::Mode::kEval);
    model.backward(objective::kl_class_grad(fwd.probs, labels, 1.0), fwd);
    for (auto* p : params) {
      Tensor& f = fisher.at(p);
      for (std::int64_t i = 0; i < f.size(); ++i) {
        const double g = p->grad[i];
        f[i] += g * g;
      }
    }
    model.zero_grad();
  }
  std::unordered_map<const nn::Param*, Tensor> scales;
  for (auto* p : params) {
    Tensor& f = fisher.at(p);
    Tensor s(f.shape());
    for (std::int64_t i = 0; i < f.size(); ++i) {
      s[i] = 1.0 / (1.0 + cfg.ewc_lambda * f[i] / static_cast<double>(batches));
    }
    scales.emplace(p, std::move(s));
  }
  return scales;
}

}  // namespace

Method parse_method(const std::string& name) {
  if (name == "ftal") return Method::kFtal;
  if (name == "rtal") return Method::kRtal;
  if (name == "ewc") return Method::kEwc;
  if (name == "au") return Method::kAu;
  if (name == "overwrite") return Method::kOverwrite;
  if (name == "prune") return Method::kPrune;
  throw ConfigError("unknown attack method: " + name);
}

std::string method_name(Method m) {
  switch (m) {
    case Method::kFtal: return "ftal";
    case Method::kRtal: return "rtal";
    case Method::kEwc: return "ewc";
    case Method::kAu: return "au";
    case Method::kOverwrite: return "overwrite";
    case Method::kPrune: return "prune";
  }
  throw ConfigError("unknown attack method enum");
}

void AttackConfig::validate() const {
  std::string bad;
  if (!(data_fraction > 0.0) || data_fraction > 1.0) bad += "data_fraction ";
  if (epochs < 0) bad += "epochs ";
  if (!(learning_rate > 0.0)) bad += "learning_rate ";
  if (batch_size < 1) bad += "batch_size ";
  if (!(prune_ratio > 0.0) || !(prune_ratio < 1.0)) bad += "prune_ratio ";
  if (trigger_size < 1) bad += "trigger_size ";
  if (poison_fraction < 0.0 || poison_fraction >= 1.0) bad += "poison_fraction ";
  if (!(aux_unlabeled_ratio > 0.0)) bad += "aux_unlabeled_ratio ";
  if (ewc_lambda < 0.0) bad += "ewc_lambda ";
  if (!bad.empty()) throw ConfigError("attack config: invalid fields: " + bad);
}

domains::DomainDataset attacker_subset(const domains::DomainDataset& data,
                                       const AttackConfig& cfg) {
  const auto m = static_cast<std::int64_t>(std::floor(cfg.data_fraction *
                                                      static_cast<double>(data.count())));
  if (m < data.num_classes) {
    throw ConfigError("attack: data_fraction leaves fewer samples than classes");
  }
  return domains::subset(data, m, Rng::derive(cfg.seed, kSubsetStream));
}

models::ModelBundle finetune_attack(const models::ModelBundle& model,
                                    const domains::DomainDataset& data, const AttackConfig& cfg,
                                    const domains::DomainDataset* unlabeled_pool) {
  cfg.validate();
  const domains::DomainDataset attacker = attacker_subset(data, cfg);
  switch (cfg.method) {
    case Method::kFtal:
      return ftal_like(model, attacker, cfg);
    case Method::kRtal: {
      models::ModelBundle attacked = model.clone();
      Rng rng(Rng::derive(cfg.seed, kReinitStream));
      attacked.classifier.init(rng);
      objective::train_supervised(attacked, attacker, train_options(cfg));
      return attacked;
    }
    case Method::kEwc: {
      models::ModelBundle attacked = model.clone();
      const auto scales = fisher_lr_scales(attacked, attacker, cfg);
      auto opt = train_options(cfg);
      opt.lr_scales = &scales;
      objective::train_supervised(attacked, attacker, opt);
      return attacked;
    }
    case Method::kAu: {
      if (unlabeled_pool == nullptr) {
        throw ConfigError("au attack requires an unlabeled pool");
      }
      if (unlabeled_pool->channels != data.channels || unlabeled_pool->height != data.height ||
          unlabeled_pool->width != data.width) {
        throw ConfigError("au attack: pool geometry mismatch");
      }
      models::ModelBundle attacked = model.clone();
      const auto extra = static_cast<std::int64_t>(
          std::floor(cfg.aux_unlabeled_ratio * static_cast<double>(attacker.count())));
      const std::int64_t take = std::min(extra, unlabeled_pool->count());
      Rng rng(Rng::derive(cfg.seed, kPoolStream));
      auto perm = rng.permutation(unlabeled_pool->count());
      perm.resize(static_cast<std::size_t>(take));
      const auto pseudo = predict_labels(attacked, *unlabeled_pool, perm);
      domains::DomainDataset unioned = attacker;
      unioned.name = attacker.name + "+pseudo" + std::to_string(take);
      for (std::size_t i = 0; i < perm.size(); ++i) {
        const std::uint8_t* img = unlabeled_pool->image(perm[i]);
        unioned.pixels.insert(unioned.pixels.end(), img, img + unlabeled_pool->image_size());
        unioned.labels.push_back(pseudo[i]);
        if (!unioned.provenance.empty()) unioned.provenance.push_back("pseudo");
      }
      objective::train_supervised(attacked, unioned, train_options(cfg));
      return attacked;
    }
    default:
      throw ConfigError("finetune_attack: method must be one of ftal/rtal/ewc/au");
  }
}

domains::DomainDataset stamp_trigger(const domains::DomainDataset& data, const AttackConfig& cfg) {
  domains::DomainDataset out = data;
  out.name = data.name + "+trigger";
  for (std::int64_t i = 0; i < out.count(); ++i) {
    stamp_image(out.image(i), out.channels, out.height, out.width, cfg.trigger_size);
  }
  return out;
}

models::ModelBundle overwrite_attack(const models::ModelBundle& model,
                                     const domains::DomainDataset& data, const AttackConfig& cfg) {
  cfg.validate();
  domains::DomainDataset attacker = attacker_subset(data, cfg);
  if (cfg.target_label >= attacker.num_classes) {
    throw ConfigError("overwrite: target_label out of range");
  }
  const auto poison = static_cast<std::int64_t>(
      std::floor(cfg.poison_fraction * static_cast<double>(attacker.count())));
  if (poison > 0) {
    Rng rng(Rng::derive(cfg.seed, kPoisonStream));
    auto perm = rng.permutation(attacker.count());
    for (std::int64_t i = 0; i < poison; ++i) {
      const std::int64_t j = perm[static_cast<std::size_t>(i)];
      stamp_image(attacker.image(j), attacker.channels, attacker.height, attacker.width,
                  cfg.trigger_size);
      attacker.labels[static_cast<std::size_t>(j)] = cfg.target_label;
    }
  }
  return ftal_like(model, attacker, cfg);
}

double trigger_accuracy(models::ModelBundle& model, const domains::DomainDataset& test,
                        const AttackConfig& cfg) {
  const domains::DomainDataset stamped = stamp_trigger(test, cfg);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(stamped.count()));
  std::iota(idx.begin(), idx.end(), 0);
  const auto pred = predict_labels(model, stamped, idx);
  std::int64_t hits = 0;
  for (const auto p : pred) {
    if (p == cfg.target_label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(stamped.count());
}

models::ModelBundle prune_attack(const models::ModelBundle& model, const AttackConfig& cfg) {
  cfg.validate();
  models::ModelBundle pruned = model.clone();
  for (auto* p : pruned.params()) {
    if (p->name != "w") continue;
    const std::int64_t count = p->value.size();
    const auto zeros = static_cast<std::int64_t>(
        std::floor(cfg.prune_ratio * static_cast<double>(count)));
    if (zeros < 1) continue;
    std::vector<std::int64_t> order(static_cast<std::size_t>(count));
    std::iota(order.begin(), order.end(), 0);
    const double* v = p->value.data();
    std::nth_element(order.begin(), order.begin() + zeros - 1, order.end(),
                     [v](std::int64_t a, std::int64_t b) {
                       const double da = std::abs(v[a]), db = std::abs(v[b]);
                       return da < db || (da == db && a < b);
                     });
    for (std::int64_t i = 0; i < zeros; ++i) {
      p->value[order[static_cast<std::size_t>(i)]] = 0.0;
    }
  }
  return pruned;
}

models::ModelBundle run_attack(const models::ModelBundle& model,
                               const domains::DomainDataset& data, const AttackConfig& cfg,
                               const domains::DomainDataset* unlabeled_pool) {
  switch (cfg.method) {
    case Method::kOverwrite:
      return overwrite_attack(model, data, cfg);
    case Method::kPrune:
      return prune_attack(model, cfg);
    default:
      return finetune_attack(model, data, cfg, unlabeled_pool);
  }
}

}  // namespace ntl::attacks
