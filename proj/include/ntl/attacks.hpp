#pragma once

#include <cstdint>
#include <string>

#include "ntl/domains.hpp"
#include "ntl/models.hpp"

namespace ntl::attacks {

enum class Method { kFtal, kRtal, kEwc, kAu, kOverwrite, kPrune };

Method parse_method(const std::string& name);  // unknown name -> ConfigError
std::string method_name(Method m);

struct AttackConfig {
  Method method = Method::kFtal;
  double data_fraction = 0.30;
  std::int64_t epochs = 50;
  double learning_rate = 1e-4;
  std::int64_t batch_size = 32;
  double prune_ratio = 0.70;
  std::int64_t trigger_size = 3;        // white corner side length
  double poison_fraction = 1.0 / 15.0;  // of the attacker's data
  std::uint16_t target_label = 0;
  double aux_unlabeled_ratio = 1.0;  // AU: pseudo-labeled per attacker sample
  double ewc_lambda = 1.0;
  std::uint64_t seed = 2021;

  void validate() const;
};

// The attacker's clean subset: data_fraction of `data`, seeded and
// class-balanced.
domains::DomainDataset attacker_subset(const domains::DomainDataset& data,
                                       const AttackConfig& cfg);

// ftal / rtal / ewc / au. Pure function of (model, data, cfg, pool): the
// input model is cloned, never mutated. `unlabeled_pool` is required by au
// (other-domain samples to pseudo-label) and ignored otherwise.
models::ModelBundle finetune_attack(const models::ModelBundle& model,
                                    const domains::DomainDataset& data, const AttackConfig& cfg,
                                    const domains::DomainDataset* unlabeled_pool = nullptr);

// Copy of `data` with the white corner trigger stamped on every image
// (labels unchanged).
domains::DomainDataset stamp_trigger(const domains::DomainDataset& data, const AttackConfig& cfg);

// Poisons poison_fraction of the attacker's data in place (trigger stamped,
// label replaced by target_label), then fine-tunes. Zero poison fraction
// reduces to ftal.
models::ModelBundle overwrite_attack(const models::ModelBundle& model,
                                     const domains::DomainDataset& data, const AttackConfig& cfg);

// Fraction of stamped test images classified as the target label.
double trigger_accuracy(models::ModelBundle& model, const domains::DomainDataset& test,
                        const AttackConfig& cfg);

// Layer-wise magnitude pruning of weight tensors; exactly
// floor(prune_ratio * count) entries per weight tensor are zeroed. No
// fine-tuning afterward.
models::ModelBundle prune_attack(const models::ModelBundle& model, const AttackConfig& cfg);

// Dispatch on cfg.method.
models::ModelBundle run_attack(const models::ModelBundle& model,
                               const domains::DomainDataset& data, const AttackConfig& cfg,
                               const domains::DomainDataset* unlabeled_pool = nullptr);

}  // namespace ntl::attacks
