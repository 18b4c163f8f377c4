#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ntl/domains.hpp"
#include "ntl/kernels.hpp"
#include "ntl/models.hpp"
#include "ntl/tensor.hpp"

namespace ntl::objective {

struct NtlConfig {
  double alpha = 0.1;
  double beta = 1.0;
  double alpha_prime = 0.1;
  double beta_prime = 1.0;
  double learning_rate = 1e-4;
  std::int64_t batch_size = 32;
  std::int64_t epochs = 30;
  std::uint64_t seed = 2021;
  kernels::KernelConfig kernel_cfg;
  // When true, train_target_specified retrains the MI probe each epoch and
  // records the estimate in the history (diagnostic only).
  bool probe_mi = false;
  std::int64_t probe_sample_count = 256;

  void validate() const;
};

struct LossParts {
  double l_s = 0.0;
  double l_a = 0.0;
  double l_dis = 0.0;
  double total = 0.0;
};

// Mean over the batch of -log(probs[y]) with probabilities clamped below at
// 1e-12 (KL divergence from the one-hot target).
double kl_class_loss(const Tensor& probs, const std::vector<std::uint16_t>& labels);
// dL/dprobs of kl_class_loss scaled by `weight`; rows where the clamp is
// active get zero gradient (the loss is flat there).
Tensor kl_class_grad(const Tensor& probs, const std::vector<std::uint16_t>& labels, double weight);

// Eq. 2 composite: l_s - min(beta, alpha * l_a).
double ntl_star_loss(double l_s, double l_a, const NtlConfig& cfg);

// Eq. 4 composition from precomputed scalars: l_dis = min(beta', alpha'*mmd),
// total = l_s - min(beta, alpha * l_a * l_dis). ntl_loss computes its parts
// through this exact function.
LossParts ntl_compose(double l_s, double l_a, double raw_mmd, const NtlConfig& cfg);

struct Batch {
  Tensor images;  // (N, C, H, W) in [0, 1]
  std::vector<std::uint16_t> labels;
};

// Eq. 4 loss parts, evaluated with dropout disabled (deterministic value).
LossParts ntl_loss(const Batch& source, const Batch& aux, models::ModelBundle& model,
                   const NtlConfig& cfg);

namespace detail {
// Full-control variant: optionally accumulates parameter gradients, selects
// the forward mode, fixes the MMD bandwidth ladder (gradient checks), and can
// weight out the source term (the aux-direction property test uses 0).
LossParts ntl_loss_backward(const Batch& source, const Batch& aux, models::ModelBundle& model,
                            const NtlConfig& cfg, bool accumulate_grads, nn::Mode mode, Rng* rng,
                            const std::vector<double>* fixed_bandwidths = nullptr,
                            double source_grad_weight = 1.0);
}  // namespace detail

struct EpochRecord {
  std::int64_t epoch = 0;
  double l_s = 0.0;
  double l_a = 0.0;
  double l_dis = 0.0;
  double total = 0.0;
  double source_acc = 0.0;
  double aux_acc = 0.0;
  std::optional<double> mi;
};

struct TrainResult {
  std::vector<EpochRecord> history;
};

// Target-specified NTL (Eq. 4) with paired source/aux mini-batches and Adam.
// `eval_source` / `eval_aux` default to the training sets when null. The
// model is trained in place; per-epoch metrics are returned.
TrainResult train_target_specified(models::ModelBundle& model,
                                   const domains::DomainDataset& source,
                                   const domains::DomainDataset& aux, const NtlConfig& cfg,
                                   const domains::DomainDataset* eval_source = nullptr,
                                   const domains::DomainDataset* eval_aux = nullptr);

struct SupervisedOptions {
  double learning_rate = 1e-4;
  std::int64_t batch_size = 32;
  std::int64_t epochs = 30;
  std::uint64_t seed = 2021;
  // Optional per-parameter learning-rate scales (EWC attack).
  const std::unordered_map<const nn::Param*, Tensor>* lr_scales = nullptr;
};

// Plain KL-loss training; history reuses EpochRecord with the aux fields
// referring to `eval_aux` when given (l_a and l_dis stay zero).
TrainResult train_supervised(models::ModelBundle& model, const domains::DomainDataset& data,
                             const SupervisedOptions& opt,
                             const domains::DomainDataset* eval_source = nullptr,
                             const domains::DomainDataset* eval_aux = nullptr);

// Argmax accuracy (first maximal index wins) in evaluation mode.
double evaluate_accuracy(models::ModelBundle& model, const domains::DomainDataset& data,
                         std::int64_t eval_batch = 256);

// Representations of a seeded sample of `count` images (all when count >= n).
Tensor extract_representations(models::ModelBundle& model, const domains::DomainDataset& data,
                               std::int64_t count, std::uint64_t seed);

std::string history_to_jsonl(const std::vector<EpochRecord>& history);

}  // namespace ntl::objective
