#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ntl/domains.hpp"
#include "ntl/kernels.hpp"
#include "ntl/nn/sequential.hpp"
#include "ntl/rng.hpp"
#include "ntl/tensor.hpp"

namespace ntl::augment {

struct AugConfig {
  std::vector<double> dis_list{0.1, 0.2, 0.3, 0.4, 0.5};
  std::int64_t num_directions = 4;
  std::int64_t gan_epochs = 20;
  std::int64_t aug_epochs = 5;
  std::int64_t latent_dim = 256;
  std::int64_t batch_size = 64;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double mse_weight = 1.0;
  // 0 selects ceil(|source| / (|dis_list| * num_directions)) per cell so the
  // auxiliary set matches the source size.
  std::int64_t per_cell_count = 0;
  std::uint64_t seed = 2021;
  kernels::KernelConfig kernel_cfg;

  void validate() const;
};

// Label-conditional generator plus a shared-extractor discriminator with a
// binary head (real/fake in [0,1]) and a multi-class head (distribution).
struct GanBundle {
  nn::Sequential generator;       // (N, latent+K) -> (N, C, H, W) in [-1, 1]
  nn::Sequential disc_extractor;  // image -> (N, feat_dim)
  nn::Sequential disc_binary;     // feat -> (N, 1)
  nn::Sequential disc_multi;      // feat -> (N, K)
  std::int64_t latent_dim = 256;
  std::int64_t num_classes = 0;
  std::int64_t channels = 0, height = 0, width = 0;
  std::int64_t feat_dim = 0;
  std::uint64_t init_seed = 0;

  GanBundle clone() const;
  std::vector<nn::Param*> disc_params();
  void zero_grad();

  // Concatenates noise with a one-hot label block.
  Tensor make_input(const Tensor& noise, const std::vector<std::uint16_t>& labels) const;
  // Eval-mode generation from seeded noise.
  Tensor generate(const std::vector<std::uint16_t>& labels, Rng& rng);
};

GanBundle build_gan(std::int64_t num_classes, std::int64_t channels, std::int64_t height,
                    std::int64_t width, std::int64_t latent_dim, std::uint64_t seed);

struct GanLosses {
  double l_d = 0.0;
  double l_g = 0.0;
  double l_gd = 0.0;
};

// Closed-form combination used by gan_losses; exposed for oracle tests.
// db_* are binary-head outputs, probs_* multi-head rows.
GanLosses gan_loss_values(const Tensor& db_real, const Tensor& db_fake, const Tensor& probs_real,
                          const std::vector<std::uint16_t>& labels, const Tensor& probs_fake,
                          const std::vector<std::uint16_t>& uniform_labels);

// Eq. 5 values on given batches: real images in [-1, 1] with labels, fake
// images (generated from uniform_labels), evaluated through the bundle.
GanLosses gan_losses(const Tensor& real_batch, const std::vector<std::uint16_t>& labels,
                     const Tensor& fake_batch, const std::vector<std::uint16_t>& uniform_labels,
                     GanBundle& bundle);

// Adversarial training: per mini-batch a G-step on L_G (+ MSE regularizer
// toward same-label real samples), a D-step on L_D, and a joint step on L_GD.
GanBundle train_gan(const domains::DomainDataset& source, const AugConfig& cfg);

// Freezes the whole discriminator and the first floor(dir*d(l)/num_directions)
// output channels of every parameterized generator layer. dir = 0 freezes
// nothing in the generator.
GanBundle& freeze_mask(GanBundle& bundle, std::int64_t dir, std::int64_t num_directions);

// -min(dis, mmd) + ce; exposed for oracle tests.
double aug_loss_value(double mmd, double ce, double dis);

// Eq. 6 value on a real batch ([-1, 1] scale) with seeded generator noise.
double aug_loss(GanBundle& bundle, const Tensor& real_batch,
                const std::vector<std::uint16_t>& labels, double dis, std::uint64_t noise_seed,
                const kernels::KernelConfig& kernel_cfg);

// Cell optimization and sampling on an already-trained bundle
// (generate_auxiliary = train_gan followed by this); exposed so parameter
// sweeps can reuse one trained GAN.
domains::DomainDataset auxiliary_from_gan(const GanBundle& trained,
                                          const domains::DomainDataset& source,
                                          const AugConfig& cfg);

// Algorithm 1: trains the GAN, then optimizes one clone per (dis, dir) cell
// and samples uniform-labeled data from each; cells are independent and
// seeded, so processing order does not affect the result.
domains::DomainDataset generate_auxiliary(const domains::DomainDataset& source,
                                          const AugConfig& cfg);

// Multi-head classification accuracy of the discriminator on real data.
double gan_multiclass_accuracy(GanBundle& bundle, const domains::DomainDataset& data);

// Mean discriminator-space MMD between `data` rows and `generated` rows,
// both given as byte datasets (used by the distance-monotonicity check).
double disc_space_mmd(GanBundle& bundle, const domains::DomainDataset& a,
                      const domains::DomainDataset& b, const kernels::KernelConfig& kernel_cfg,
                      std::int64_t sample_count, std::uint64_t seed);

void save_gan(const GanBundle& bundle, const std::string& path);
GanBundle load_gan(const std::string& path);

}  // namespace ntl::augment
