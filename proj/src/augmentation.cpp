#include "ntl/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ntl/errors.hpp"
#include "ntl/nn/adam.hpp"
#include "ntl/objective.hpp"
#include "ntl/serial.hpp"

using json = nlohmann::ordered_json;

namespace ntl::augment {

namespace {

constexpr std::uint64_t kGanInitStream = 0x6A11;
constexpr std::uint64_t kGanEpochStream = 3000;
constexpr std::uint64_t kCellStream = 10000;

std::vector<std::int64_t> slice(const std::vector<std::int64_t>& perm, std::int64_t start,
                                std::int64_t count) {
  return {perm.begin() + start, perm.begin() + start + count};
}

// [0, 1] batch -> [-1, 1].
Tensor signed_batch(const domains::DomainDataset& ds, const std::vector<std::int64_t>& idx) {
  Tensor t = domains::to_unit_tensor(ds, idx);
  double* d = t.data();
  for (std::int64_t i = 0; i < t.size(); ++i) d[i] = 2.0 * d[i] - 1.0;
  return t;
}

void check_geometry(const domains::DomainDataset& ds) {
  if (ds.height != ds.width || ds.height % 8 != 0) {
    throw ConfigError("gan: image side must be square and divisible by 8");
  }
}

std::vector<std::uint16_t> subrange(const std::vector<std::uint16_t>& v, std::int64_t start,
                                    std::int64_t count) {
  return {v.begin() + start, v.begin() + start + count};
}

}  // namespace

void AugConfig::validate() const {
  std::string bad;
  if (dis_list.empty()) {
    bad += "dis_list ";
  } else {
    double prev = 0.0;
    for (const double d : dis_list) {
      if (!(d > prev)) {
        bad += "dis_list ";
        break;
      }
      prev = d;
    }
  }
  if (num_directions < 1) bad += "num_directions ";
  if (gan_epochs < 0) bad += "gan_epochs ";
  if (aug_epochs < 0) bad += "aug_epochs ";
  if (latent_dim < 1) bad += "latent_dim ";
  if (batch_size < 2) bad += "batch_size ";
  if (!(learning_rate > 0.0)) bad += "learning_rate ";
  if (!(beta1 >= 0.0 && beta1 < 1.0)) bad += "beta1 ";
  if (!(beta2 >= 0.0 && beta2 < 1.0)) bad += "beta2 ";
  if (mse_weight < 0.0) bad += "mse_weight ";
  if (per_cell_count < 0) bad += "per_cell_count ";
  if (!bad.empty()) throw ConfigError("augment config: invalid fields: " + bad);
  kernel_cfg.validate();
}

GanBundle GanBundle::clone() const {
  GanBundle b;
  b.generator = generator.clone();
  b.disc_extractor = disc_extractor.clone();
  b.disc_binary = disc_binary.clone();
  b.disc_multi = disc_multi.clone();
  b.latent_dim = latent_dim;
  b.num_classes = num_classes;
  b.channels = channels;
  b.height = height;
  b.width = width;
  b.feat_dim = feat_dim;
  b.init_seed = init_seed;
  return b;
}

std::vector<nn::Param*> GanBundle::disc_params() {
  std::vector<nn::Param*> out = disc_extractor.params();
  for (auto* p : disc_binary.params()) out.push_back(p);
  for (auto* p : disc_multi.params()) out.push_back(p);
  return out;
}

void GanBundle::zero_grad() {
  generator.zero_grad();
  disc_extractor.zero_grad();
  disc_binary.zero_grad();
  disc_multi.zero_grad();
}

Tensor GanBundle::make_input(const Tensor& noise, const std::vector<std::uint16_t>& labels) const {
  if (noise.ndim() != 2 || noise.dim(1) != latent_dim) {
    throw DimensionError("gan input: noise must be (N, latent_dim)");
  }
  const std::int64_t n = noise.dim(0);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw DimensionError("gan input: label count mismatch");
  }
  Tensor out({n, latent_dim + num_classes});
  out.zero();
  for (std::int64_t i = 0; i < n; ++i) {
    const double* src = noise.data() + i * latent_dim;
    double* dst = out.data() + i * (latent_dim + num_classes);
    std::copy(src, src + latent_dim, dst);
    const auto y = labels[static_cast<std::size_t>(i)];
    if (y >= num_classes) throw DimensionError("gan input: label out of range");
    dst[latent_dim + y] = 1.0;
  }
  return out;
}

Tensor GanBundle::generate(const std::vector<std::uint16_t>& labels, Rng& rng) {
  const std::int64_t n = static_cast<std::int64_t>(labels.size());
  Tensor out({n, channels, height, width});
  const std::int64_t img = channels * height * width;
  const std::int64_t chunk = 128;
  for (std::int64_t start = 0; start < n; start += chunk) {
    const std::int64_t m = std::min(chunk, n - start);
    Tensor noise({m, latent_dim});
    rng.fill_normal(noise.data(), static_cast<std::size_t>(noise.size()));
    const Tensor gin = make_input(noise, subrange(labels, start, m));
    const Tensor fake = generator.forward(gin, nullptr, nn::Mode::kEval, nullptr);
    std::copy(fake.data(), fake.data() + m * img, out.data() + start * img);
  }
  return out;
}

GanBundle build_gan(std::int64_t num_classes, std::int64_t channels, std::int64_t height,
                    std::int64_t width, std::int64_t latent_dim, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("gan: num_classes must be at least 2");
  if (height != width || height % 8 != 0 || height < 8) {
    throw ConfigError("gan: image side must be square and divisible by 8");
  }
  GanBundle b;
  b.latent_dim = latent_dim;
  b.num_classes = num_classes;
  b.channels = channels;
  b.height = height;
  b.width = width;
  b.init_seed = seed;
  const std::int64_t s0 = height / 8;

  b.generator.add(std::make_unique<nn::Linear>(latent_dim + num_classes, 64 * s0 * s0));
  b.generator.add(std::make_unique<nn::Reshape>(64, s0, s0));
  b.generator.add(std::make_unique<nn::BatchNorm2d>(64));
  b.generator.add(std::make_unique<nn::ReLU>());
  b.generator.add(std::make_unique<nn::ConvTranspose2d>(64, 32, 4, 2, 1));
  b.generator.add(std::make_unique<nn::BatchNorm2d>(32));
  b.generator.add(std::make_unique<nn::ReLU>());
  {
    nn::Sequential res;
    res.add(std::make_unique<nn::Conv2d>(32, 32, 3, 1, 1));
    res.add(std::make_unique<nn::BatchNorm2d>(32));
    res.add(std::make_unique<nn::ReLU>());
    res.add(std::make_unique<nn::Conv2d>(32, 32, 3, 1, 1));
    res.add(std::make_unique<nn::BatchNorm2d>(32));
    b.generator.add(std::make_unique<nn::Residual>(std::move(res)));
  }
  b.generator.add(std::make_unique<nn::ReLU>());
  b.generator.add(std::make_unique<nn::ConvTranspose2d>(32, 16, 4, 2, 1));
  b.generator.add(std::make_unique<nn::BatchNorm2d>(16));
  b.generator.add(std::make_unique<nn::ReLU>());
  b.generator.add(std::make_unique<nn::ConvTranspose2d>(16, channels, 4, 2, 1));
  b.generator.add(std::make_unique<nn::Tanh>());

  b.disc_extractor.add(std::make_unique<nn::Conv2d>(channels, 16, 4, 2, 1));
  b.disc_extractor.add(std::make_unique<nn::LeakyReLU>(0.2));
  b.disc_extractor.add(std::make_unique<nn::Dropout>(0.3));
  b.disc_extractor.add(std::make_unique<nn::Conv2d>(16, 32, 4, 2, 1));
  b.disc_extractor.add(std::make_unique<nn::LeakyReLU>(0.2));
  b.disc_extractor.add(std::make_unique<nn::Dropout>(0.3));
  b.disc_extractor.add(std::make_unique<nn::Conv2d>(32, 64, 4, 2, 1));
  b.disc_extractor.add(std::make_unique<nn::LeakyReLU>(0.2));
  b.disc_extractor.add(std::make_unique<nn::Flatten>());
  b.feat_dim = 64 * s0 * s0;

  b.disc_binary.add(std::make_unique<nn::Linear>(b.feat_dim, 128));
  b.disc_binary.add(std::make_unique<nn::LeakyReLU>(0.2));
  b.disc_binary.add(std::make_unique<nn::Linear>(128, 1));
  b.disc_binary.add(std::make_unique<nn::Sigmoid>());

  b.disc_multi.add(std::make_unique<nn::Linear>(b.feat_dim, 128));
  b.disc_multi.add(std::make_unique<nn::LeakyReLU>(0.2));
  b.disc_multi.add(std::make_unique<nn::Linear>(128, num_classes));
  b.disc_multi.add(std::make_unique<nn::Softmax>());

  Rng rng(seed);
  b.generator.init(rng);
  b.disc_extractor.init(rng);
  b.disc_binary.init(rng);
  b.disc_multi.init(rng);
  return b;
}

GanLosses gan_loss_values(const Tensor& db_real, const Tensor& db_fake, const Tensor& probs_real,
                          const std::vector<std::uint16_t>& labels, const Tensor& probs_fake,
                          const std::vector<std::uint16_t>& uniform_labels) {
  const std::int64_t m = db_real.size();
  const std::int64_t n = db_fake.size();
  if (m < 1 || n < 1) throw DimensionError("gan losses: empty batch");
  GanLosses out;
  double real_term = 0.0, fake_term = 0.0, g_term = 0.0;
  for (std::int64_t i = 0; i < m; ++i) {
    const double d = db_real.data()[i] - 1.0;
    real_term += d * d;
  }
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = db_fake.data()[i];
    fake_term += d * d;
    g_term += (d - 1.0) * (d - 1.0);
  }
  out.l_d = 0.5 * real_term / static_cast<double>(m) + 0.5 * fake_term / static_cast<double>(n) +
            objective::kl_class_loss(probs_real, labels);
  out.l_g = g_term / static_cast<double>(n);
  out.l_gd = objective::kl_class_loss(probs_fake, uniform_labels);
  return out;
}

GanLosses gan_losses(const Tensor& real_batch, const std::vector<std::uint16_t>& labels,
                     const Tensor& fake_batch, const std::vector<std::uint16_t>& uniform_labels,
                     GanBundle& bundle) {
  const Tensor zr = bundle.disc_extractor.forward(real_batch, nullptr, nn::Mode::kEval, nullptr);
  const Tensor zf = bundle.disc_extractor.forward(fake_batch, nullptr, nn::Mode::kEval, nullptr);
  const Tensor db_r = bundle.disc_binary.forward(zr, nullptr, nn::Mode::kEval, nullptr);
  const Tensor db_f = bundle.disc_binary.forward(zf, nullptr, nn::Mode::kEval, nullptr);
  const Tensor dm_r = bundle.disc_multi.forward(zr, nullptr, nn::Mode::kEval, nullptr);
  const Tensor dm_f = bundle.disc_multi.forward(zf, nullptr, nn::Mode::kEval, nullptr);
  return gan_loss_values(db_r, db_f, dm_r, labels, dm_f, uniform_labels);
}

GanBundle train_gan(const domains::DomainDataset& source, const AugConfig& cfg) {
  cfg.validate();
  source.validate();
  check_geometry(source);
  GanBundle b = build_gan(source.num_classes, source.channels, source.height, source.width,
                          cfg.latent_dim, Rng::derive(cfg.seed, kGanInitStream));
  const std::int64_t n = source.count();
  const std::int64_t bsz = std::min<std::int64_t>(cfg.batch_size, n);
  if (bsz < 2) throw ConfigError("gan: need at least 2 samples");
  const nn::AdamConfig acfg{cfg.learning_rate, cfg.beta1, cfg.beta2, 1e-8};
  nn::Adam adam_g(b.generator.params(), acfg);
  nn::Adam adam_d(b.disc_params(), acfg);
  const std::int64_t k = b.num_classes;

  for (std::int64_t epoch = 0; epoch < cfg.gan_epochs; ++epoch) {
    Rng rng(Rng::derive(cfg.seed, kGanEpochStream + static_cast<std::uint64_t>(epoch)));
    const auto perm = rng.permutation(n);
    const std::int64_t steps = n / bsz;
    for (std::int64_t s = 0; s < steps; ++s) {
      const auto idx = slice(perm, s * bsz, bsz);
      const Tensor real = signed_batch(source, idx);
      const auto labels = domains::gather_labels(source, idx);

      {  // generator step: L_G plus the paired MSE regularizer
        Tensor noise({bsz, b.latent_dim});
        rng.fill_normal(noise.data(), static_cast<std::size_t>(noise.size()));
        const Tensor gin = b.make_input(noise, labels);
        nn::Tape tg, tz, tb;
        const Tensor fake = b.generator.forward(gin, &tg, nn::Mode::kTrain, &rng);
        const Tensor zf = b.disc_extractor.forward(fake, &tz, nn::Mode::kTrain, &rng);
        const Tensor db = b.disc_binary.forward(zf, &tb, nn::Mode::kTrain, &rng);
        Tensor gdb({bsz, 1});
        for (std::int64_t i = 0; i < bsz; ++i) {
          gdb.data()[i] = 2.0 * (db.data()[i] - 1.0) / static_cast<double>(bsz);
        }
        const Tensor gzf = b.disc_binary.backward(gdb, tb);
        Tensor gfake = b.disc_extractor.backward(gzf, tz);
        const double wm = 2.0 * cfg.mse_weight / static_cast<double>(fake.size());
        for (std::int64_t i = 0; i < fake.size(); ++i) {
          gfake.data()[i] += wm * (fake.data()[i] - real.data()[i]);
        }
        b.generator.backward(gfake, tg);
        adam_g.step();
        b.zero_grad();
      }

      {  // discriminator step: L_D
        Tensor noise({bsz, b.latent_dim});
        rng.fill_normal(noise.data(), static_cast<std::size_t>(noise.size()));
        const Tensor gin = b.make_input(noise, labels);
        const Tensor fake = b.generator.forward(gin, nullptr, nn::Mode::kTrain, &rng);
        nn::Tape tzr, tzf, tbr, tbf, tmr;
        const Tensor zr = b.disc_extractor.forward(real, &tzr, nn::Mode::kTrain, &rng);
        const Tensor zf = b.disc_extractor.forward(fake, &tzf, nn::Mode::kTrain, &rng);
        const Tensor db_r = b.disc_binary.forward(zr, &tbr, nn::Mode::kTrain, &rng);
        const Tensor db_f = b.disc_binary.forward(zf, &tbf, nn::Mode::kTrain, &rng);
        const Tensor dm_r = b.disc_multi.forward(zr, &tmr, nn::Mode::kTrain, &rng);
        Tensor gdbr({bsz, 1}), gdbf({bsz, 1});
        for (std::int64_t i = 0; i < bsz; ++i) {
          gdbr.data()[i] = (db_r.data()[i] - 1.0) / static_cast<double>(bsz);
          gdbf.data()[i] = db_f.data()[i] / static_cast<double>(bsz);
        }
        Tensor gzr = b.disc_binary.backward(gdbr, tbr);
        gzr.add_(b.disc_multi.backward(objective::kl_class_grad(dm_r, labels, 1.0), tmr));
        const Tensor gzf = b.disc_binary.backward(gdbf, tbf);
        b.disc_extractor.backward(gzr, tzr);
        b.disc_extractor.backward(gzf, tzf);
        adam_d.step();
        b.zero_grad();
      }

      {  // joint step: L_GD with uniform labels
        std::vector<std::uint16_t> yu(static_cast<std::size_t>(bsz));
        for (auto& y : yu) y = static_cast<std::uint16_t>(rng.uniform_int(k));
        Tensor noise({bsz, b.latent_dim});
        rng.fill_normal(noise.data(), static_cast<std::size_t>(noise.size()));
        const Tensor gin = b.make_input(noise, yu);
        nn::Tape tg, tz, tm;
        const Tensor fake = b.generator.forward(gin, &tg, nn::Mode::kTrain, &rng);
        const Tensor zf = b.disc_extractor.forward(fake, &tz, nn::Mode::kTrain, &rng);
        const Tensor dm_f = b.disc_multi.forward(zf, &tm, nn::Mode::kTrain, &rng);
        const Tensor gz = b.disc_multi.backward(objective::kl_class_grad(dm_f, yu, 1.0), tm);
        const Tensor gfake = b.disc_extractor.backward(gz, tz);
        b.generator.backward(gfake, tg);
        adam_g.step();
        adam_d.step();
        b.zero_grad();
      }
    }
  }
  return b;
}

GanBundle& freeze_mask(GanBundle& bundle, std::int64_t dir, std::int64_t num_directions) {
  if (num_directions < 1 || dir < 0 || dir >= num_directions) {
    throw ConfigError("freeze_mask: dir must be in [0, num_directions)");
  }
  bundle.disc_extractor.set_trainable(false);
  bundle.disc_binary.set_trainable(false);
  bundle.disc_multi.set_trainable(false);
  for (std::size_t i = 0; i < bundle.generator.size(); ++i) {
    bundle.generator.layer(i).freeze_channel_fraction(dir, num_directions);
  }
  return bundle;
}

double aug_loss_value(double mmd, double ce, double dis) {
  return -std::min(dis, mmd) + ce;
}

double aug_loss(GanBundle& bundle, const Tensor& real_batch,
                const std::vector<std::uint16_t>& labels, double dis, std::uint64_t noise_seed,
                const kernels::KernelConfig& kernel_cfg) {
  Rng rng(noise_seed);
  const Tensor fake = bundle.generate(labels, rng);
  const Tensor zr = bundle.disc_extractor.forward(real_batch, nullptr, nn::Mode::kEval, nullptr);
  const Tensor zf = bundle.disc_extractor.forward(fake, nullptr, nn::Mode::kEval, nullptr);
  const double m = kernels::mmd(zr, zf, kernel_cfg);
  const Tensor probs = bundle.disc_multi.forward(zf, nullptr, nn::Mode::kEval, nullptr);
  return aug_loss_value(m, objective::kl_class_loss(probs, labels), dis);
}

namespace {

// Per-cell uniform label plan: an equal share of every class plus a
// remainder rotated across cells (contiguous round-robin), so each cell stays
// near-uniform and the union stays balanced.
std::vector<std::uint16_t> cell_labels(std::int64_t per_cell, std::int64_t k,
                                       std::int64_t cell_index, Rng& rng) {
  std::vector<std::uint16_t> labels;
  labels.reserve(static_cast<std::size_t>(per_cell));
  const std::int64_t base = per_cell / k;
  const std::int64_t rem = per_cell % k;
  for (std::int64_t c = 0; c < k; ++c) {
    for (std::int64_t j = 0; j < base; ++j) labels.push_back(static_cast<std::uint16_t>(c));
  }
  const std::int64_t start = (cell_index * rem) % k;
  for (std::int64_t j = 0; j < rem; ++j) {
    labels.push_back(static_cast<std::uint16_t>((start + j) % k));
  }
  rng.shuffle(labels);
  return labels;
}

void optimize_cell(GanBundle& b, const domains::DomainDataset& source, const AugConfig& cfg,
                   double dis, Rng& rng) {
  const std::int64_t n = source.count();
  const std::int64_t bsz = std::min<std::int64_t>(cfg.batch_size, n);
  if (bsz < 2) throw ConfigError("augment: need at least 2 samples");
  nn::Adam adam(b.generator.params(), {cfg.learning_rate, cfg.beta1, cfg.beta2, 1e-8});
  for (std::int64_t epoch = 0; epoch < cfg.aug_epochs; ++epoch) {
    const auto perm = rng.permutation(n);
    const std::int64_t steps = n / bsz;
    for (std::int64_t s = 0; s < steps; ++s) {
      const auto idx = slice(perm, s * bsz, bsz);
      const Tensor real = signed_batch(source, idx);
      const auto labels = domains::gather_labels(source, idx);
      Tensor noise({bsz, b.latent_dim});
      rng.fill_normal(noise.data(), static_cast<std::size_t>(noise.size()));
      const Tensor gin = b.make_input(noise, labels);
      nn::Tape tg, tz, tm;
      const Tensor fake = b.generator.forward(gin, &tg, nn::Mode::kTrain, &rng);
      // The frozen discriminator acts as a fixed feature map, so it runs in
      // eval mode (tape recorded for the pass-through gradient only).
      const Tensor zr = b.disc_extractor.forward(real, nullptr, nn::Mode::kEval, nullptr);
      const Tensor zf = b.disc_extractor.forward(fake, &tz, nn::Mode::kEval, nullptr);
      Tensor gzf_mmd;
      const double m = kernels::mmd_grad(zr, zf, cfg.kernel_cfg, nullptr, &gzf_mmd);
      const Tensor probs = b.disc_multi.forward(zf, &tm, nn::Mode::kEval, nullptr);
      Tensor gzf = b.disc_multi.backward(objective::kl_class_grad(probs, labels, 1.0), tm);
      if (m < dis) gzf.add_(gzf_mmd, -1.0);
      const Tensor gfake = b.disc_extractor.backward(gzf, tz);
      b.generator.backward(gfake, tg);
      adam.step();
      b.zero_grad();
    }
  }
}

}  // namespace

domains::DomainDataset auxiliary_from_gan(const GanBundle& trained,
                                          const domains::DomainDataset& source,
                                          const AugConfig& cfg) {
  cfg.validate();
  source.validate();
  if (trained.num_classes != source.num_classes || trained.channels != source.channels ||
      trained.height != source.height || trained.width != source.width) {
    throw DimensionError("augment: bundle/source geometry mismatch");
  }
  const std::int64_t cells =
      static_cast<std::int64_t>(cfg.dis_list.size()) * cfg.num_directions;
  const std::int64_t per_cell =
      cfg.per_cell_count > 0 ? cfg.per_cell_count : (source.count() + cells - 1) / cells;

  domains::DomainDataset out;
  out.name = "aux:" + source.name;
  out.num_classes = source.num_classes;
  out.channels = source.channels;
  out.height = source.height;
  out.width = source.width;
  out.pixels.reserve(static_cast<std::size_t>(cells * per_cell * source.image_size()));
  out.labels.reserve(static_cast<std::size_t>(cells * per_cell));
  out.provenance.reserve(static_cast<std::size_t>(cells * per_cell));

  for (std::size_t di = 0; di < cfg.dis_list.size(); ++di) {
    for (std::int64_t dir = 0; dir < cfg.num_directions; ++dir) {
      const std::int64_t cell_index =
          static_cast<std::int64_t>(di) * cfg.num_directions + dir;
      Rng rng(Rng::derive(cfg.seed, kCellStream + static_cast<std::uint64_t>(cell_index)));
      GanBundle b = trained.clone();
      freeze_mask(b, dir, cfg.num_directions);
      optimize_cell(b, source, cfg, cfg.dis_list[di], rng);

      const auto labels = cell_labels(per_cell, b.num_classes, cell_index, rng);
      const Tensor images = b.generate(labels, rng);
      std::ostringstream tag;
      tag << "dis=" << cfg.dis_list[di] << ",dir=" << dir;
      for (std::int64_t i = 0; i < per_cell; ++i) {
        const double* img = images.data() + i * source.image_size();
        for (std::int64_t j = 0; j < source.image_size(); ++j) {
          const double v = std::lround((img[j] + 1.0) * 127.5);
          out.pixels.push_back(static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0)));
        }
        out.labels.push_back(labels[static_cast<std::size_t>(i)]);
        out.provenance.push_back(tag.str());
      }
    }
  }
  out.validate();
  return out;
}

domains::DomainDataset generate_auxiliary(const domains::DomainDataset& source,
                                          const AugConfig& cfg) {
  const GanBundle trained = train_gan(source, cfg);
  return auxiliary_from_gan(trained, source, cfg);
}

double gan_multiclass_accuracy(GanBundle& bundle, const domains::DomainDataset& data) {
  if (data.count() == 0) throw ConfigError("gan accuracy: empty dataset");
  std::int64_t correct = 0;
  const std::int64_t chunk = 256;
  for (std::int64_t start = 0; start < data.count(); start += chunk) {
    const std::int64_t m = std::min(chunk, data.count() - start);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(m));
    for (std::int64_t i = 0; i < m; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    const Tensor real = signed_batch(data, idx);
    const Tensor z = bundle.disc_extractor.forward(real, nullptr, nn::Mode::kEval, nullptr);
    const Tensor p = bundle.disc_multi.forward(z, nullptr, nn::Mode::kEval, nullptr);
    for (std::int64_t i = 0; i < m; ++i) {
      const double* row = p.data() + i * bundle.num_classes;
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < bundle.num_classes; ++c) {
        if (row[c] > row[best]) best = c;
      }
      if (best == data.labels[static_cast<std::size_t>(start + i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.count());
}

namespace {

Tensor extract_features(GanBundle& bundle, const domains::DomainDataset& ds,
                        std::int64_t sample_count, Rng& rng) {
  const std::int64_t take = std::min<std::int64_t>(sample_count, ds.count());
  auto perm = rng.permutation(ds.count());
  perm.resize(static_cast<std::size_t>(take));
  Tensor out({take, bundle.feat_dim});
  const std::int64_t chunk = 256;
  for (std::int64_t start = 0; start < take; start += chunk) {
    const std::int64_t m = std::min(chunk, take - start);
    const std::vector<std::int64_t> idx(perm.begin() + start, perm.begin() + start + m);
    const Tensor real = signed_batch(ds, idx);
    const Tensor z = bundle.disc_extractor.forward(real, nullptr, nn::Mode::kEval, nullptr);
    std::copy(z.data(), z.data() + m * bundle.feat_dim, out.data() + start * bundle.feat_dim);
  }
  return out;
}

}  // namespace

double disc_space_mmd(GanBundle& bundle, const domains::DomainDataset& a,
                      const domains::DomainDataset& b, const kernels::KernelConfig& kernel_cfg,
                      std::int64_t sample_count, std::uint64_t seed) {
  Rng rng_a(Rng::derive(seed, 0xD15A));
  Rng rng_b(Rng::derive(seed, 0xD15B));
  const Tensor za = extract_features(bundle, a, sample_count, rng_a);
  const Tensor zb = extract_features(bundle, b, sample_count, rng_b);
  return kernels::mmd(za, zb, kernel_cfg);
}

void save_gan(const GanBundle& bundle, const std::string& path) {
  json meta;
  meta["latent_dim"] = bundle.latent_dim;
  meta["num_classes"] = bundle.num_classes;
  meta["channels"] = bundle.channels;
  meta["height"] = bundle.height;
  meta["width"] = bundle.width;
  meta["init_seed"] = bundle.init_seed;
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  auto& b = const_cast<GanBundle&>(bundle);
  for (auto& [name, t] : b.generator.state()) tensors.emplace_back("g." + name, t);
  for (auto& [name, t] : b.disc_extractor.state()) tensors.emplace_back("dz." + name, t);
  for (auto& [name, t] : b.disc_binary.state()) tensors.emplace_back("db." + name, t);
  for (auto& [name, t] : b.disc_multi.state()) tensors.emplace_back("dm." + name, t);
  serial::write_container(path, "ntl-gan", meta.dump(), tensors);
}

GanBundle load_gan(const std::string& path) {
  serial::Container c = serial::read_container(path);
  if (c.kind != "ntl-gan") throw IoError("checkpoint at " + path + " is not a GAN bundle");
  json meta;
  try {
    meta = json::parse(c.meta_json);
  } catch (const json::exception& e) {
    throw IoError("gan checkpoint: bad metadata: " + std::string(e.what()));
  }
  GanBundle b = build_gan(meta.at("num_classes").get<std::int64_t>(),
                          meta.at("channels").get<std::int64_t>(),
                          meta.at("height").get<std::int64_t>(),
                          meta.at("width").get<std::int64_t>(),
                          meta.at("latent_dim").get<std::int64_t>(),
                          meta.at("init_seed").get<std::uint64_t>());
  auto fill = [&c, &path](nn::Sequential& net, const std::string& prefix) {
    for (auto& [name, t] : net.state()) {
      const auto it = c.tensors.find(prefix + name);
      if (it == c.tensors.end()) {
        throw IoError("gan checkpoint " + path + ": missing tensor " + prefix + name);
      }
      if (!it->second.same_shape(*t)) {
        throw IoError("gan checkpoint " + path + ": shape mismatch for " + prefix + name);
      }
      *t = it->second;
    }
  };
  fill(b.generator, "g.");
  fill(b.disc_extractor, "dz.");
  fill(b.disc_binary, "db.");
  fill(b.disc_multi, "dm.");
  return b;
}

}  // namespace ntl::augment
