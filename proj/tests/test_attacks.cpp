#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "ntl/attacks.hpp"
#include "ntl/domains.hpp"
#include "ntl/errors.hpp"
#include "ntl/models.hpp"
#include "ntl/objective.hpp"
#include "ntl/protection.hpp"
#include "ntl/rng.hpp"

using namespace ntl;
using namespace ntl::attacks;

namespace {

models::ArchitectureSpec micro_arch(std::int64_t k) {
  models::ArchitectureSpec s;
  s.input_height = 8;
  s.input_width = 8;
  s.extractor_layers = {
      {.kind = "conv", .channels = 4, .kernel = 3, .stride = 1, .pad = 1},
      {.kind = "batchnorm"},
      {.kind = "leakyrelu", .p = 0.2},
      {.kind = "maxpool", .kernel = 2, .stride = 2},
  };
  s.classifier_layers = {8, k};
  s.repr_dim = 4 * 4 * 4;
  s.stage_split = 1;
  return s;
}

models::ArchitectureSpec small_arch(std::int64_t k) {
  models::ArchitectureSpec s;
  s.extractor_layers = {
      {.kind = "conv", .channels = 8, .kernel = 4, .stride = 2, .pad = 1},
      {.kind = "relu"},
      {.kind = "conv", .channels = 16, .kernel = 4, .stride = 2, .pad = 1},
      {.kind = "relu"},
      {.kind = "maxpool", .kernel = 2, .stride = 2},
  };
  s.classifier_layers = {64, k};
  s.repr_dim = 16 * 4 * 4;
  s.stage_split = 1;
  return s;
}

domains::DomainDataset tiny_data(Rng& rng, std::int64_t n, std::int64_t k,
                                 const std::string& name = "tiny") {
  domains::DomainDataset ds;
  ds.name = name;
  ds.num_classes = k;
  ds.channels = 3;
  ds.height = 8;
  ds.width = 8;
  ds.pixels.resize(static_cast<std::size_t>(n * 3 * 8 * 8));
  for (auto& px : ds.pixels) px = static_cast<std::uint8_t>(rng.uniform_int(256));
  ds.labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    ds.labels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(i % k);
  }
  return ds;
}

std::vector<double> all_weights(models::ModelBundle& m) {
  std::vector<double> out;
  for (auto* p : m.params()) {
    out.insert(out.end(), p->value.vec().begin(), p->value.vec().end());
  }
  return out;
}

std::vector<double> all_weights(models::ModelBundle&& m) { return all_weights(m); }

std::vector<double> part_weights(nn::Sequential& part) {
  std::vector<double> out;
  for (auto& [name, t] : part.state()) {
    out.insert(out.end(), t->vec().begin(), t->vec().end());
  }
  return out;
}

std::vector<double> prune_expect(const std::vector<double>& w, double ratio) {
  const auto n = static_cast<std::int64_t>(w.size());
  const auto zeros = static_cast<std::int64_t>(std::floor(ratio * static_cast<double>(n)));
  std::vector<double> out = w;
  if (zeros < 1) return out;
  std::vector<std::int64_t> order(w.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    const double da = std::abs(w[static_cast<std::size_t>(a)]);
    const double db = std::abs(w[static_cast<std::size_t>(b)]);
    return da < db || (da == db && a < b);
  });
  for (std::int64_t i = 0; i < zeros; ++i) out[static_cast<std::size_t>(order[i])] = 0.0;
  return out;
}

struct OwnershipFx {
  models::ModelBundle model;
  domains::DomainDataset src;
  domains::DomainDataset tgt;
  domains::PatchSpec patch;
};

OwnershipFx& ownership_fixture() {
  static OwnershipFx fx = [] {
    domains::ShiftSpec shift;
    auto [src, tgt] = domains::make_synthetic_domain_pair(2021, shift, 240, 4);
    auto model = models::build_model(small_arch(4), 2021);
    const domains::PatchSpec patch{.v = 100, .channel = 0};
    objective::NtlConfig cfg;
    cfg.epochs = 36;
    cfg.batch_size = 16;
    cfg.learning_rate = 2e-4;
    cfg.seed = 2021;
    protection::train_ownership(model, src, patch, cfg);
    return OwnershipFx{std::move(model), std::move(src), std::move(tgt), patch};
  }();
  return fx;
}

AttackConfig quick_cfg(Method m) {
  AttackConfig cfg;
  cfg.method = m;
  cfg.data_fraction = 0.5;
  cfg.epochs = 2;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 8;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("method names round trip") {
  const std::vector<std::pair<std::string, Method>> table = {
      {"ftal", Method::kFtal}, {"rtal", Method::kRtal},           {"ewc", Method::kEwc},
      {"au", Method::kAu},     {"overwrite", Method::kOverwrite}, {"prune", Method::kPrune},
  };
  for (const auto& [name, m] : table) {
    CHECK(parse_method(name) == m);
    CHECK(method_name(m) == name);
  }
  CHECK_THROWS_AS(parse_method("gradient-inversion"), ConfigError);
  CHECK_THROWS_AS(parse_method(""), ConfigError);
}

TEST_CASE("config validation names each bad field") {
  AttackConfig ok;
  CHECK_NOTHROW(ok.validate());

  const auto message = [](const AttackConfig& cfg) {
    try {
      cfg.validate();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };

  AttackConfig cfg;
  cfg.data_fraction = 0.0;
  CHECK(message(cfg).find("data_fraction") != std::string::npos);
  cfg = AttackConfig{};
  cfg.data_fraction = 1.2;
  CHECK(message(cfg).find("data_fraction") != std::string::npos);
  cfg = AttackConfig{};
  cfg.data_fraction = 1.0;
  CHECK_NOTHROW(cfg.validate());

  cfg = AttackConfig{};
  cfg.epochs = -1;
  CHECK(message(cfg).find("epochs") != std::string::npos);
  cfg = AttackConfig{};
  cfg.learning_rate = 0.0;
  CHECK(message(cfg).find("learning_rate") != std::string::npos);
  cfg = AttackConfig{};
  cfg.batch_size = 0;
  CHECK(message(cfg).find("batch_size") != std::string::npos);
  cfg = AttackConfig{};
  cfg.prune_ratio = 1.0;
  CHECK(message(cfg).find("prune_ratio") != std::string::npos);
  cfg = AttackConfig{};
  cfg.prune_ratio = 0.0;
  CHECK(message(cfg).find("prune_ratio") != std::string::npos);
  cfg = AttackConfig{};
  cfg.trigger_size = 0;
  CHECK(message(cfg).find("trigger_size") != std::string::npos);
  cfg = AttackConfig{};
  cfg.poison_fraction = 1.0;
  CHECK(message(cfg).find("poison_fraction") != std::string::npos);
  cfg = AttackConfig{};
  cfg.poison_fraction = -0.1;
  CHECK(message(cfg).find("poison_fraction") != std::string::npos);
  cfg = AttackConfig{};
  cfg.poison_fraction = 0.0;
  CHECK_NOTHROW(cfg.validate());
  cfg = AttackConfig{};
  cfg.aux_unlabeled_ratio = 0.0;
  CHECK(message(cfg).find("aux_unlabeled_ratio") != std::string::npos);
  cfg = AttackConfig{};
  cfg.ewc_lambda = -1.0;
  CHECK(message(cfg).find("ewc_lambda") != std::string::npos);
  cfg = AttackConfig{};
  cfg.ewc_lambda = 0.0;
  CHECK_NOTHROW(cfg.validate());

  cfg = AttackConfig{};
  cfg.data_fraction = -0.5;
  cfg.batch_size = -3;
  cfg.prune_ratio = 2.0;
  const std::string multi = message(cfg);
  CHECK(multi.find("data_fraction") != std::string::npos);
  CHECK(multi.find("batch_size") != std::string::npos);
  CHECK(multi.find("prune_ratio") != std::string::npos);
}

TEST_CASE("attacker subset is a seeded balanced fraction") {
  Rng rng(40);
  const auto data = tiny_data(rng, 60, 4);
  AttackConfig cfg;
  cfg.data_fraction = 0.3;

  const auto sub = attacker_subset(data, cfg);
  CHECK(sub.count() == 18);
  CHECK(sub.num_classes == 4);
  std::vector<std::int64_t> hist(4, 0);
  for (const auto y : sub.labels) ++hist[y];
  const auto [lo, hi] = std::minmax_element(hist.begin(), hist.end());
  CHECK(*hi - *lo <= 1);

  const auto again = attacker_subset(data, cfg);
  CHECK(sub.pixels == again.pixels);
  CHECK(sub.labels == again.labels);

  AttackConfig other = cfg;
  other.seed = cfg.seed + 1;
  const auto moved = attacker_subset(data, other);
  CHECK(moved.pixels != sub.pixels);

  AttackConfig full = cfg;
  full.data_fraction = 1.0;
  CHECK(attacker_subset(data, full).count() == 60);

  AttackConfig starved = cfg;
  starved.data_fraction = 0.05;  // floor(3) < 4 classes
  CHECK_THROWS_AS(attacker_subset(data, starved), ConfigError);
}

TEST_CASE("zero-epoch attacks leave the fine-tuned weights alone") {
  Rng rng(41);
  const auto data = tiny_data(rng, 32, 4);
  const auto pool = tiny_data(rng, 16, 4, "pool");
  auto model = models::build_model(micro_arch(4), 9);
  const auto before = all_weights(model);

  for (const Method m : {Method::kFtal, Method::kEwc, Method::kAu}) {
    AttackConfig cfg = quick_cfg(m);
    cfg.epochs = 0;
    auto attacked = finetune_attack(model, data, cfg, &pool);
    CHECK(all_weights(attacked) == before);
    CHECK(attacked.train_step_count == model.train_step_count);
  }

  AttackConfig ow = quick_cfg(Method::kOverwrite);
  ow.epochs = 0;
  auto attacked = overwrite_attack(model, data, ow);
  CHECK(all_weights(attacked) == before);

  // rtal still reinitializes the classifier, deterministically.
  AttackConfig rt = quick_cfg(Method::kRtal);
  rt.epochs = 0;
  auto r1 = finetune_attack(model, data, rt);
  auto r2 = finetune_attack(model, data, rt);
  CHECK(part_weights(r1.extractor) == part_weights(model.extractor));
  CHECK(part_weights(r1.classifier) != part_weights(model.classifier));
  CHECK(part_weights(r1.classifier) == part_weights(r2.classifier));
}

TEST_CASE("attacks never mutate the input and rerun bit-identically") {
  Rng rng(42);
  const auto data = tiny_data(rng, 32, 4);
  const auto pool = tiny_data(rng, 20, 4, "pool");
  auto model = models::build_model(micro_arch(4), 10);
  const auto before = all_weights(model);

  for (const Method m :
       {Method::kFtal, Method::kRtal, Method::kEwc, Method::kAu, Method::kOverwrite,
        Method::kPrune}) {
    const AttackConfig cfg = quick_cfg(m);
    auto a1 = run_attack(model, data, cfg, &pool);
    CHECK(all_weights(model) == before);
    auto a2 = run_attack(model, data, cfg, &pool);
    CHECK(all_weights(a1) == all_weights(a2));
    if (m != Method::kPrune) {
      AttackConfig moved = cfg;
      moved.seed = cfg.seed + 1;
      auto a3 = run_attack(model, data, moved, &pool);
      CHECK(all_weights(a3) != all_weights(a1));
    }
  }
}

TEST_CASE("overwrite with zero poison is exactly ftal") {
  Rng rng(43);
  const auto data = tiny_data(rng, 32, 4);
  auto model = models::build_model(micro_arch(4), 11);

  AttackConfig ft = quick_cfg(Method::kFtal);
  AttackConfig ow = ft;
  ow.method = Method::kOverwrite;
  ow.poison_fraction = 0.0;

  auto a = finetune_attack(model, data, ft);
  auto b = overwrite_attack(model, data, ow);
  CHECK(all_weights(a) == all_weights(b));

  AttackConfig poisoned = ow;
  poisoned.poison_fraction = 0.3;
  auto c = overwrite_attack(model, data, poisoned);
  CHECK(all_weights(c) != all_weights(a));

  AttackConfig bad_target = ow;
  bad_target.target_label = 7;
  CHECK_THROWS_AS(overwrite_attack(model, data, bad_target), ConfigError);
}

TEST_CASE("ewc with zero lambda is exactly ftal") {
  Rng rng(44);
  const auto data = tiny_data(rng, 32, 4);
  auto model = models::build_model(micro_arch(4), 12);

  AttackConfig ft = quick_cfg(Method::kFtal);
  AttackConfig ewc = ft;
  ewc.method = Method::kEwc;
  ewc.ewc_lambda = 0.0;
  CHECK(all_weights(finetune_attack(model, data, ewc)) ==
        all_weights(finetune_attack(model, data, ft)));

  ewc.ewc_lambda = 1.0;
  CHECK(all_weights(finetune_attack(model, data, ewc)) !=
        all_weights(finetune_attack(model, data, ft)));
}

TEST_CASE("au pseudo-labeling unions the pool") {
  Rng rng(45);
  const auto data = tiny_data(rng, 32, 4);
  const auto pool = tiny_data(rng, 20, 4, "pool");
  auto model = models::build_model(micro_arch(4), 13);

  AttackConfig au = quick_cfg(Method::kAu);
  CHECK_THROWS_AS(finetune_attack(model, data, au), ConfigError);
  CHECK_THROWS_AS(finetune_attack(model, data, au, nullptr), ConfigError);

  Rng rng2(46);
  domains::DomainDataset wide = tiny_data(rng2, 8, 4);
  wide.width = 16;
  wide.pixels.resize(static_cast<std::size_t>(8 * 3 * 8 * 16), 0);
  CHECK_THROWS_AS(finetune_attack(model, data, au, &wide), ConfigError);

  // A vanishing pool share reduces au to ftal on the attacker subset.
  AttackConfig none = au;
  none.aux_unlabeled_ratio = 1e-9;
  AttackConfig ft = au;
  ft.method = Method::kFtal;
  CHECK(all_weights(finetune_attack(model, data, none, &pool)) ==
        all_weights(finetune_attack(model, data, ft)));
  CHECK(all_weights(finetune_attack(model, data, au, &pool)) !=
        all_weights(finetune_attack(model, data, ft)));
}

TEST_CASE("trigger stamping is a white corner") {
  Rng rng(47);
  const auto data = tiny_data(rng, 6, 3);
  AttackConfig cfg;
  cfg.trigger_size = 3;

  const auto stamped = stamp_trigger(data, cfg);
  CHECK(stamped.name == data.name + "+trigger");
  CHECK(stamped.count() == data.count());
  CHECK(stamped.labels == data.labels);
  for (std::int64_t i = 0; i < stamped.count(); ++i) {
    const std::uint8_t* got = stamped.image(i);
    const std::uint8_t* orig = data.image(i);
    for (std::int64_t c = 0; c < 3; ++c) {
      for (std::int64_t y = 0; y < 8; ++y) {
        for (std::int64_t x = 0; x < 8; ++x) {
          const std::int64_t at = (c * 8 + y) * 8 + x;
          if (y < 3 && x < 3) {
            CHECK(got[at] == 255);
          } else {
            CHECK(got[at] == orig[at]);
          }
        }
      }
    }
  }

  // Oversized trigger clamps to the image.
  AttackConfig big = cfg;
  big.trigger_size = 100;
  const auto white = stamp_trigger(data, big);
  for (std::int64_t i = 0; i < white.count() * white.image_size(); ++i) {
    CHECK(white.pixels[static_cast<std::size_t>(i)] == 255);
  }
}

TEST_CASE("trigger accuracy counts target classifications") {
  Rng rng(48);
  const auto data = tiny_data(rng, 40, 4);
  auto model = models::build_model(micro_arch(4), 14);
  AttackConfig cfg;

  double total = 0.0;
  for (std::uint16_t k = 0; k < 4; ++k) {
    AttackConfig c = cfg;
    c.target_label = k;
    const double acc = trigger_accuracy(model, data, c);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    total += acc;
  }
  CHECK(total == 1.0);

  // Manual recompute of the default-target fraction.
  const auto stamped = stamp_trigger(data, cfg);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(stamped.count()));
  std::iota(idx.begin(), idx.end(), 0);
  auto [z, probs] = model.forward(domains::to_unit_tensor(stamped, idx));
  std::int64_t hits = 0;
  for (std::int64_t i = 0; i < probs.dim(0); ++i) {
    const double* row = probs.data() + i * probs.dim(1);
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < probs.dim(1); ++c) {
      if (row[c] > row[best]) best = c;
    }
    if (best == cfg.target_label) ++hits;
  }
  CHECK(trigger_accuracy(model, data, cfg) ==
        static_cast<double>(hits) / static_cast<double>(data.count()));
}

TEST_CASE("pruning zeroes the smallest weights per tensor") {
  auto model = models::build_model(micro_arch(4), 15);
  AttackConfig cfg;
  cfg.method = Method::kPrune;
  cfg.prune_ratio = 0.5;

  const auto before = all_weights(model);
  auto pruned = prune_attack(model, cfg);
  CHECK(all_weights(model) == before);

  auto in_params = model.params();
  auto out_params = pruned.params();
  REQUIRE(in_params.size() == out_params.size());
  for (std::size_t i = 0; i < in_params.size(); ++i) {
    const auto& w = in_params[i]->value.vec();
    const auto& got = out_params[i]->value.vec();
    if (in_params[i]->name != "w") {
      CHECK(got == w);
      continue;
    }
    CHECK(got == prune_expect(w, cfg.prune_ratio));
    const auto zeros = static_cast<std::int64_t>(std::count(got.begin(), got.end(), 0.0));
    CHECK(zeros == static_cast<std::int64_t>(std::floor(cfg.prune_ratio *
                                                        static_cast<double>(got.size()))));
  }

  // A vanishing ratio floors to zero entries everywhere.
  AttackConfig tiny = cfg;
  tiny.prune_ratio = 1e-9;
  auto untouched = prune_attack(model, tiny);
  CHECK(all_weights(untouched) == before);
}

TEST_CASE("pruning breaks magnitude ties by index") {
  auto model = models::build_model(micro_arch(2), 16);
  nn::Param* final_w = nullptr;
  for (auto* p : model.params()) {
    if (p->name == "w" && p->value.size() == 16) final_w = p;
  }
  REQUIRE(final_w != nullptr);

  const std::vector<double> vals = {0.1,  -0.1, 0.1,  -0.1, 0.2,  -0.2, 0.2,  -0.2,
                                    -0.3, 0.3,  -0.3, 0.3,  0.4,  -0.4, 0.4,  -0.4};
  for (std::int64_t i = 0; i < 16; ++i) final_w->value[i] = vals[static_cast<std::size_t>(i)];

  AttackConfig cfg;
  cfg.method = Method::kPrune;
  cfg.prune_ratio = 0.625;  // 10 of 16: all .1s and .2s, then ties at .3 fall to indices 8, 9
  auto pruned = prune_attack(model, cfg);
  nn::Param* got = nullptr;
  for (auto* p : pruned.params()) {
    if (p->name == "w" && p->value.size() == 16) got = p;
  }
  REQUIRE(got != nullptr);
  for (std::int64_t i = 0; i < 8; ++i) CHECK(got->value[i] == 0.0);
  CHECK(got->value[8] == 0.0);
  CHECK(got->value[9] == 0.0);
  CHECK(got->value[10] == -0.3);
  CHECK(got->value[11] == 0.3);
  for (std::int64_t i = 12; i < 16; ++i) CHECK(got->value[i] == vals[static_cast<std::size_t>(i)]);
}

TEST_CASE("run_attack dispatches on method") {
  Rng rng(49);
  const auto data = tiny_data(rng, 32, 4);
  auto model = models::build_model(micro_arch(4), 17);

  AttackConfig ft = quick_cfg(Method::kFtal);
  CHECK(all_weights(run_attack(model, data, ft)) ==
        all_weights(finetune_attack(model, data, ft)));

  AttackConfig pr = quick_cfg(Method::kPrune);
  CHECK(all_weights(run_attack(model, data, pr)) == all_weights(prune_attack(model, pr)));

  AttackConfig ow = quick_cfg(Method::kOverwrite);
  ow.poison_fraction = 0.25;
  CHECK(all_weights(run_attack(model, data, ow)) ==
        all_weights(overwrite_attack(model, data, ow)));
}

TEST_CASE("fine-tuning cannot restore the patched domain") {
  auto& fx = ownership_fixture();
  const auto patched = domains::apply_patch(fx.src, fx.patch);
  const double clean_before = objective::evaluate_accuracy(fx.model, fx.src);
  const double patched_before = objective::evaluate_accuracy(fx.model, patched);
  REQUIRE(clean_before >= 0.85);
  REQUIRE(patched_before <= 0.30);

  AttackConfig cfg;  // desk-scale defaults: 30% of the data, 50 epochs, lr 1e-4
  auto attacked = finetune_attack(fx.model, fx.src, cfg);

  const double clean = objective::evaluate_accuracy(attacked, fx.src);
  const double with_patch = objective::evaluate_accuracy(attacked, patched);
  CHECK(clean >= 0.85);
  CHECK(with_patch <= 0.30);
  CHECK(clean - with_patch >= 0.4);
}

TEST_CASE("overwriting embeds a new backdoor without restoring the patch") {
  auto& fx = ownership_fixture();
  const auto patched = domains::apply_patch(fx.src, fx.patch);

  AttackConfig cfg;
  cfg.method = Method::kOverwrite;
  cfg.data_fraction = 0.5;
  cfg.poison_fraction = 0.25;
  cfg.epochs = 40;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 16;
  auto attacked = overwrite_attack(fx.model, fx.src, cfg);

  CHECK(trigger_accuracy(attacked, fx.src, cfg) >= 0.8);
  CHECK(objective::evaluate_accuracy(attacked, patched) <= 0.30);
}
