#include "ntl/runner.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ntl/errors.hpp"
#include "ntl/models.hpp"
#include "ntl/protection.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace ntl::runner {

namespace {

constexpr std::uint64_t kModelStream = 0xB1;
constexpr std::uint64_t kBaselineStream = 0xB2;
constexpr std::uint64_t kSupervisedStream = 0x51;
constexpr std::uint64_t kSplitStream = 0x57;
constexpr std::uint64_t kAttackStreamBase = 0xA700;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw MissingFileError("missing file: " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::string shift_kind_name(domains::ShiftKind k) {
  switch (k) {
    case domains::ShiftKind::kIdentity: return "identity";
    case domains::ShiftKind::kBackgroundTint: return "background_tint";
    case domains::ShiftKind::kAdditiveTexture: return "additive_texture";
    case domains::ShiftKind::kChannelPermutation: return "channel_permutation";
  }
  throw ConfigError("unknown shift kind enum");
}

domains::ShiftKind parse_shift_kind(const std::string& name) {
  if (name == "identity") return domains::ShiftKind::kIdentity;
  if (name == "background_tint") return domains::ShiftKind::kBackgroundTint;
  if (name == "additive_texture") return domains::ShiftKind::kAdditiveTexture;
  if (name == "channel_permutation") return domains::ShiftKind::kChannelPermutation;
  throw ConfigError("unknown shift kind: " + name);
}

json shift_to_json(const domains::ShiftSpec& s) {
  json j;
  j["kind"] = shift_kind_name(s.kind);
  j["strength"] = s.strength;
  j["amplitude"] = s.amplitude;
  j["freq_x"] = s.freq_x;
  j["freq_y"] = s.freq_y;
  j["permutation"] = s.permutation;
  return j;
}

domains::ShiftSpec shift_from_json(const json& j) {
  domains::ShiftSpec s;
  s.kind = parse_shift_kind(j.value("kind", shift_kind_name(s.kind)));
  s.strength = j.value("strength", s.strength);
  s.amplitude = j.value("amplitude", s.amplitude);
  s.freq_x = j.value("freq_x", s.freq_x);
  s.freq_y = j.value("freq_y", s.freq_y);
  s.permutation = j.value("permutation", s.permutation);
  return s;
}

json kernel_to_json(const kernels::KernelConfig& k) {
  json j;
  j["mul"] = k.mul;
  j["num"] = k.num;
  return j;
}

kernels::KernelConfig kernel_from_json(const json& j) {
  kernels::KernelConfig k;
  k.mul = j.value("mul", k.mul);
  k.num = j.value("num", k.num);
  return k;
}

json dataset_to_json(const DatasetSpec& d) {
  json j;
  j["kind"] = d.kind;
  j["root"] = d.root;
  j["name"] = d.name;
  j["target_name"] = d.target_name;
  j["num_classes"] = d.num_classes;
  j["train_count"] = d.train_count;
  j["test_count"] = d.test_count;
  j["shift"] = shift_to_json(d.shift);
  return j;
}

DatasetSpec dataset_from_json(const json& j) {
  DatasetSpec d;
  d.kind = j.value("kind", d.kind);
  d.root = j.value("root", d.root);
  d.name = j.value("name", d.name);
  d.target_name = j.value("target_name", d.target_name);
  d.num_classes = j.value("num_classes", d.num_classes);
  d.train_count = j.value("train_count", d.train_count);
  d.test_count = j.value("test_count", d.test_count);
  if (j.contains("shift")) d.shift = shift_from_json(j.at("shift"));
  return d;
}

json ntl_to_json(const objective::NtlConfig& c) {
  json j;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["alpha_prime"] = c.alpha_prime;
  j["beta_prime"] = c.beta_prime;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["kernel"] = kernel_to_json(c.kernel_cfg);
  j["probe_mi"] = c.probe_mi;
  j["probe_sample_count"] = c.probe_sample_count;
  return j;
}

objective::NtlConfig ntl_from_json(const json& j) {
  objective::NtlConfig c;
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.alpha_prime = j.value("alpha_prime", c.alpha_prime);
  c.beta_prime = j.value("beta_prime", c.beta_prime);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  if (j.contains("kernel")) c.kernel_cfg = kernel_from_json(j.at("kernel"));
  c.probe_mi = j.value("probe_mi", c.probe_mi);
  c.probe_sample_count = j.value("probe_sample_count", c.probe_sample_count);
  return c;
}

json supervised_to_json(const objective::SupervisedOptions& o) {
  json j;
  j["learning_rate"] = o.learning_rate;
  j["batch_size"] = o.batch_size;
  j["epochs"] = o.epochs;
  return j;
}

objective::SupervisedOptions supervised_from_json(const json& j) {
  objective::SupervisedOptions o;
  o.learning_rate = j.value("learning_rate", o.learning_rate);
  o.batch_size = j.value("batch_size", o.batch_size);
  o.epochs = j.value("epochs", o.epochs);
  return o;
}

json aug_to_json(const augment::AugConfig& a) {
  json j;
  j["dis_list"] = a.dis_list;
  j["num_directions"] = a.num_directions;
  j["gan_epochs"] = a.gan_epochs;
  j["aug_epochs"] = a.aug_epochs;
  j["latent_dim"] = a.latent_dim;
  j["batch_size"] = a.batch_size;
  j["learning_rate"] = a.learning_rate;
  j["beta1"] = a.beta1;
  j["beta2"] = a.beta2;
  j["mse_weight"] = a.mse_weight;
  j["per_cell_count"] = a.per_cell_count;
  j["kernel"] = kernel_to_json(a.kernel_cfg);
  return j;
}

augment::AugConfig aug_from_json(const json& j) {
  augment::AugConfig a;
  a.dis_list = j.value("dis_list", a.dis_list);
  a.num_directions = j.value("num_directions", a.num_directions);
  a.gan_epochs = j.value("gan_epochs", a.gan_epochs);
  a.aug_epochs = j.value("aug_epochs", a.aug_epochs);
  a.latent_dim = j.value("latent_dim", a.latent_dim);
  a.batch_size = j.value("batch_size", a.batch_size);
  a.learning_rate = j.value("learning_rate", a.learning_rate);
  a.beta1 = j.value("beta1", a.beta1);
  a.beta2 = j.value("beta2", a.beta2);
  a.mse_weight = j.value("mse_weight", a.mse_weight);
  a.per_cell_count = j.value("per_cell_count", a.per_cell_count);
  if (j.contains("kernel")) a.kernel_cfg = kernel_from_json(j.at("kernel"));
  return a;
}

json patch_to_json(const domains::PatchSpec& p) {
  json j;
  j["v"] = p.v;
  j["channel"] = p.channel;
  return j;
}

domains::PatchSpec patch_from_json(const json& j) {
  domains::PatchSpec p;
  p.v = j.value("v", p.v);
  p.channel = j.value("channel", p.channel);
  return p;
}

json attack_to_json(const attacks::AttackConfig& a) {
  json j;
  j["method"] = attacks::method_name(a.method);
  j["data_fraction"] = a.data_fraction;
  j["epochs"] = a.epochs;
  j["learning_rate"] = a.learning_rate;
  j["batch_size"] = a.batch_size;
  j["prune_ratio"] = a.prune_ratio;
  j["trigger_size"] = a.trigger_size;
  j["poison_fraction"] = a.poison_fraction;
  j["target_label"] = a.target_label;
  j["aux_unlabeled_ratio"] = a.aux_unlabeled_ratio;
  j["ewc_lambda"] = a.ewc_lambda;
  return j;
}

attacks::AttackConfig attack_from_json(const json& j) {
  attacks::AttackConfig a;
  a.method = attacks::parse_method(j.value("method", attacks::method_name(a.method)));
  a.data_fraction = j.value("data_fraction", a.data_fraction);
  a.epochs = j.value("epochs", a.epochs);
  a.learning_rate = j.value("learning_rate", a.learning_rate);
  a.batch_size = j.value("batch_size", a.batch_size);
  a.prune_ratio = j.value("prune_ratio", a.prune_ratio);
  a.trigger_size = j.value("trigger_size", a.trigger_size);
  a.poison_fraction = j.value("poison_fraction", a.poison_fraction);
  a.target_label = j.value("target_label", a.target_label);
  a.aux_unlabeled_ratio = j.value("aux_unlabeled_ratio", a.aux_unlabeled_ratio);
  a.ewc_lambda = j.value("ewc_lambda", a.ewc_lambda);
  return a;
}

json verification_to_json(const protection::VerificationReport& r) {
  json j;
  j["acc_without_patch"] = r.acc_without_patch;
  j["acc_with_patch"] = r.acc_with_patch;
  j["gap"] = r.gap;
  j["threshold"] = r.threshold;
  j["verified"] = r.verified;
  return j;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

// Stratified seeded split: test takes an equal per-class share.
std::pair<domains::DomainDataset, domains::DomainDataset> split_dataset(
    const domains::DomainDataset& ds, std::int64_t test_count, std::uint64_t seed) {
  if (test_count < ds.num_classes || test_count >= ds.count()) {
    throw ConfigError("dataset split: bad test_count");
  }
  std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::int64_t i = 0; i < ds.count(); ++i) {
    by_class[ds.labels[static_cast<std::size_t>(i)]].push_back(i);
  }
  Rng rng(seed);
  std::vector<std::int64_t> test_idx, train_idx;
  const std::int64_t per = test_count / ds.num_classes;
  std::int64_t rem = test_count % ds.num_classes;
  for (auto& cls : by_class) {
    rng.shuffle(cls);
    std::int64_t take = per + (rem > 0 ? 1 : 0);
    if (rem > 0) --rem;
    if (take >= static_cast<std::int64_t>(cls.size())) {
      throw ConfigError("dataset split: class too small");
    }
    test_idx.insert(test_idx.end(), cls.begin(), cls.begin() + take);
    train_idx.insert(train_idx.end(), cls.begin() + take, cls.end());
  }
  rng.shuffle(test_idx);
  rng.shuffle(train_idx);
  auto gather = [&ds](const std::vector<std::int64_t>& idx, const std::string& suffix) {
    domains::DomainDataset out;
    out.name = ds.name + suffix;
    out.num_classes = ds.num_classes;
    out.channels = ds.channels;
    out.height = ds.height;
    out.width = ds.width;
    for (const auto i : idx) {
      out.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
      const std::uint8_t* img = ds.image(i);
      out.pixels.insert(out.pixels.end(), img, img + ds.image_size());
    }
    return out;
  };
  return {gather(train_idx, "#train"), gather(test_idx, "#test")};
}

}  // namespace

Mode parse_mode(const std::string& name) {
  if (name == "supervised") return Mode::kSupervised;
  if (name == "target-specified") return Mode::kTargetSpecified;
  if (name == "source-only") return Mode::kSourceOnly;
  if (name == "ownership") return Mode::kOwnership;
  if (name == "authorization") return Mode::kAuthorization;
  throw ConfigError("unknown mode: " + name);
}

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::kSupervised: return "supervised";
    case Mode::kTargetSpecified: return "target-specified";
    case Mode::kSourceOnly: return "source-only";
    case Mode::kOwnership: return "ownership";
    case Mode::kAuthorization: return "authorization";
  }
  throw ConfigError("unknown mode enum");
}

void ExperimentConfig::validate() const {
  std::string bad;
  auto check = [&bad](const char* field, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      bad += std::string(field) + "(" + e.what() + ") ";
    }
  };
  if (dataset.kind != "synthetic" && dataset.kind != "ingest") bad += "dataset.kind ";
  if (dataset.kind == "synthetic") {
    if (dataset.num_classes < 2 || dataset.num_classes > 10) bad += "dataset.num_classes ";
    if (dataset.train_count < dataset.num_classes) bad += "dataset.train_count ";
    if (dataset.test_count < dataset.num_classes) bad += "dataset.test_count ";
    check("dataset.shift", [this] { dataset.shift.validate(); });
  } else {
    if (dataset.root.empty()) bad += "dataset.root ";
    if (dataset.name.empty()) bad += "dataset.name ";
    if (dataset.test_count < 1) bad += "dataset.test_count ";
    const bool needs_target =
        mode == Mode::kTargetSpecified ||
        (mode == Mode::kOwnership &&
         std::any_of(attack_list.begin(), attack_list.end(),
                     [](const attacks::AttackConfig& a) { return a.method == attacks::Method::kAu; }));
    if (needs_target && dataset.target_name.empty()) bad += "dataset.target_name ";
  }
  check("ntl", [this] { ntl.validate(); });
  if (supervised.learning_rate <= 0.0 || supervised.batch_size < 1 || supervised.epochs < 0) {
    bad += "supervised ";
  }
  if (mode == Mode::kSourceOnly || mode == Mode::kAuthorization) {
    check("aug", [this] { aug.validate(); });
  }
  if ((mode == Mode::kOwnership || mode == Mode::kAuthorization) && patch.v == 0) {
    bad += "patch.v ";
  }
  if (!(verify_threshold > 0.0) || verify_threshold > 1.0) bad += "verify_threshold ";
  for (std::size_t i = 0; i < attack_list.size(); ++i) {
    check(("attacks[" + std::to_string(i) + "]").c_str(),
          [this, i] { attack_list[i].validate(); });
  }
  if (seeds.empty()) bad += "seeds ";
  if (output_dir.empty()) bad += "output_dir ";
  if (!bad.empty()) throw ConfigError("experiment config: invalid fields: " + bad);
}

std::string ExperimentConfig::to_json_text() const {
  json j;
  j["mode"] = mode_name(mode);
  j["dataset"] = dataset_to_json(dataset);
  j["ntl"] = ntl_to_json(ntl);
  j["supervised"] = supervised_to_json(supervised);
  j["aug"] = aug_to_json(aug);
  j["patch"] = patch_to_json(patch);
  j["verify_threshold"] = verify_threshold;
  json atk = json::array();
  for (const auto& a : attack_list) atk.push_back(attack_to_json(a));
  j["attacks"] = std::move(atk);
  j["seeds"] = seeds;
  j["output_dir"] = output_dir;
  return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("experiment config: parse error: " + std::string(e.what()));
  }
  ExperimentConfig c;
  c.mode = parse_mode(j.value("mode", mode_name(c.mode)));
  if (j.contains("dataset")) c.dataset = dataset_from_json(j.at("dataset"));
  if (j.contains("ntl")) c.ntl = ntl_from_json(j.at("ntl"));
  if (j.contains("supervised")) c.supervised = supervised_from_json(j.at("supervised"));
  if (j.contains("aug")) c.aug = aug_from_json(j.at("aug"));
  if (j.contains("patch")) c.patch = patch_from_json(j.at("patch"));
  c.verify_threshold = j.value("verify_threshold", c.verify_threshold);
  if (j.contains("attacks")) {
    c.attack_list.clear();
    for (const auto& a : j.at("attacks")) c.attack_list.push_back(attack_from_json(a));
  }
  c.seeds = j.value("seeds", c.seeds);
  c.output_dir = j.value("output_dir", c.output_dir);
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  return from_json_text(read_text(path));
}

Suite build_suite(const DatasetSpec& spec, std::uint64_t seed) {
  Suite s;
  if (spec.kind == "synthetic") {
    domains::SyntheticSpec sp;
    sp.seed = seed;
    sp.num_classes = spec.num_classes;
    sp.train_count = spec.train_count;
    sp.test_count = spec.test_count;
    sp.shift = spec.shift;
    auto suite = domains::make_synthetic_suite(sp);
    s.source_train = std::move(suite.source_train);
    s.source_test = std::move(suite.source_test);
    s.target_train = std::move(suite.target_train);
    s.target_test = std::move(suite.target_test);
    s.has_target = true;
    return s;
  }
  if (spec.kind != "ingest") throw ConfigError("dataset.kind must be synthetic or ingest");
  const domains::DomainDataset source = domains::ingest_dataset(spec.name, spec.root);
  std::tie(s.source_train, s.source_test) =
      split_dataset(source, spec.test_count, Rng::derive(seed, kSplitStream));
  if (!spec.target_name.empty()) {
    const domains::DomainDataset target = domains::ingest_dataset(spec.target_name, spec.root);
    std::tie(s.target_train, s.target_test) =
        split_dataset(target, spec.test_count, Rng::derive(seed, kSplitStream + 1));
    s.has_target = true;
  }
  return s;
}

namespace {

json run_supervised_seed(const ExperimentConfig& cfg, Suite& suite, std::uint64_t seed,
                         const fs::path& sd) {
  auto model = models::build_model(models::ArchitectureSpec::tiny(suite.source_train.num_classes),
                                   Rng::derive(seed, kModelStream));
  auto opt = cfg.supervised;
  opt.seed = Rng::derive(seed, kSupervisedStream);
  const auto result = objective::train_supervised(
      model, suite.source_train, opt, &suite.source_test,
      suite.has_target ? &suite.target_test : nullptr);
  write_text(sd / "history.jsonl", objective::history_to_jsonl(result.history));
  models::save_checkpoint(model, (sd / "model.ckpt").string());
  json m;
  m["source_test_acc"] = objective::evaluate_accuracy(model, suite.source_test);
  if (suite.has_target) {
    m["target_test_acc"] = objective::evaluate_accuracy(model, suite.target_test);
  }
  return m;
}

json run_target_specified_seed(const ExperimentConfig& cfg, Suite& suite, std::uint64_t seed,
                               const fs::path& sd) {
  auto ntl = cfg.ntl;
  ntl.seed = seed;
  auto model = models::build_model(models::ArchitectureSpec::tiny(suite.source_train.num_classes),
                                   Rng::derive(seed, kModelStream));
  const auto result = objective::train_target_specified(
      model, suite.source_train, suite.target_train, ntl, &suite.source_test, &suite.target_test);
  write_text(sd / "history.jsonl", objective::history_to_jsonl(result.history));
  models::save_checkpoint(model, (sd / "model.ckpt").string());
  json m;
  m["source_test_acc"] = objective::evaluate_accuracy(model, suite.source_test);
  m["target_test_acc"] = objective::evaluate_accuracy(model, suite.target_test);
  if (!result.history.empty() && result.history.back().mi) {
    m["mi_final"] = *result.history.back().mi;
  }
  return m;
}

json run_source_only_seed(const ExperimentConfig& cfg, Suite& suite, std::uint64_t seed,
                          const fs::path& sd) {
  auto aug = cfg.aug;
  aug.seed = seed;
  const auto gan = augment::train_gan(suite.source_train, aug);
  augment::save_gan(gan, (sd / "gan.ckpt").string());
  const auto aux = augment::auxiliary_from_gan(gan, suite.source_train, aug);
  domains::serialize_dataset(aux, (sd / "aux").string());
  auto ntl = cfg.ntl;
  ntl.seed = seed;
  auto model = models::build_model(models::ArchitectureSpec::tiny(suite.source_train.num_classes),
                                   Rng::derive(seed, kModelStream));
  const auto result =
      objective::train_target_specified(model, suite.source_train, aux, ntl, &suite.source_test);
  write_text(sd / "history.jsonl", objective::history_to_jsonl(result.history));
  models::save_checkpoint(model, (sd / "model.ckpt").string());
  json m;
  m["source_test_acc"] = objective::evaluate_accuracy(model, suite.source_test);
  m["aux_acc"] = objective::evaluate_accuracy(model, aux);
  if (suite.has_target) {
    m["target_test_acc"] = objective::evaluate_accuracy(model, suite.target_test);
  }
  return m;
}

json run_ownership_seed(const ExperimentConfig& cfg, Suite& suite, std::uint64_t seed,
                        const fs::path& sd) {
  auto ntl = cfg.ntl;
  ntl.seed = seed;
  auto model = models::build_model(models::ArchitectureSpec::tiny(suite.source_train.num_classes),
                                   Rng::derive(seed, kModelStream));
  const auto result =
      protection::train_ownership(model, suite.source_train, cfg.patch, ntl, &suite.source_test);
  write_text(sd / "history.jsonl", objective::history_to_jsonl(result.history));
  models::save_checkpoint(model, (sd / "model.ckpt").string());
  const auto ver_ntl =
      protection::verify_ownership(model, suite.source_test, cfg.patch, cfg.verify_threshold);

  auto baseline = models::build_model(
      models::ArchitectureSpec::tiny(suite.source_train.num_classes),
      Rng::derive(seed, kBaselineStream));
  auto opt = cfg.supervised;
  opt.seed = Rng::derive(seed, kSupervisedStream);
  const auto base_result =
      objective::train_supervised(baseline, suite.source_train, opt, &suite.source_test);
  write_text(sd / "baseline-history.jsonl", objective::history_to_jsonl(base_result.history));
  models::save_checkpoint(baseline, (sd / "baseline.ckpt").string());
  const auto ver_sl =
      protection::verify_ownership(baseline, suite.source_test, cfg.patch, cfg.verify_threshold);

  json ver;
  ver["threshold"] = cfg.verify_threshold;
  ver["sl"] = verification_to_json(ver_sl);
  ver["ntl"] = verification_to_json(ver_ntl);
  write_text(sd / "verification.json", ver.dump(2) + "\n");

  json m;
  m["sl_patched"] = ver_sl.acc_with_patch;
  m["sl_clean"] = ver_sl.acc_without_patch;
  m["sl_gap"] = ver_sl.gap;
  m["ntl_patched"] = ver_ntl.acc_with_patch;
  m["ntl_clean"] = ver_ntl.acc_without_patch;
  m["ntl_gap"] = ver_ntl.gap;
  m["ntl_verified"] = ver_ntl.verified ? 1.0 : 0.0;

  std::ostringstream attack_lines;
  std::map<std::string, int> seen;
  for (std::size_t i = 0; i < cfg.attack_list.size(); ++i) {
    auto a = cfg.attack_list[i];
    a.seed = Rng::derive(seed, kAttackStreamBase + static_cast<std::uint64_t>(i));
    auto attacked = attacks::run_attack(model, suite.source_train, a,
                                        suite.has_target ? &suite.target_train : nullptr);
    const auto ver_post = protection::verify_ownership(attacked, suite.source_test, cfg.patch,
                                                       cfg.verify_threshold);
    std::string key = attacks::method_name(a.method);
    const int idx = seen[key]++;
    if (idx > 0) key += "#" + std::to_string(idx + 1);
    json line;
    line["method"] = attacks::method_name(a.method);
    line["key"] = key;
    line["config"] = attack_to_json(a);
    line["pre"] = verification_to_json(ver_ntl);
    line["post"] = verification_to_json(ver_post);
    if (a.method == attacks::Method::kOverwrite) {
      const double trig = attacks::trigger_accuracy(attacked, suite.source_test, a);
      line["trigger_accuracy"] = trig;
      m[key + "_trigger_acc"] = trig;
    }
    attack_lines << line.dump() << "\n";
    m[key + "_patched"] = ver_post.acc_with_patch;
    m[key + "_clean"] = ver_post.acc_without_patch;
    m[key + "_gap"] = ver_post.gap;
  }
  write_text(sd / "attacks.jsonl", attack_lines.str());
  return m;
}

json run_authorization_seed(const ExperimentConfig& cfg, Suite& suite, std::uint64_t seed,
                            const fs::path& sd) {
  auto aug = cfg.aug;
  aug.seed = seed;
  const auto gan = augment::train_gan(suite.source_train, aug);
  augment::save_gan(gan, (sd / "gan.ckpt").string());
  const auto gen = augment::auxiliary_from_gan(gan, suite.source_train, aug);
  domains::serialize_dataset(gen, (sd / "aux").string());
  auto ntl = cfg.ntl;
  ntl.seed = seed;
  auto model = models::build_model(models::ArchitectureSpec::tiny(suite.source_train.num_classes),
                                   Rng::derive(seed, kModelStream));
  auto result = protection::train_authorized(model, suite.source_train, cfg.patch, aug, ntl, &gen,
                                             &suite.source_test);
  domains::serialize_dataset(result.auxiliary, (sd / "auth-aux").string());
  write_text(sd / "history.jsonl", objective::history_to_jsonl(result.history.history));
  models::save_checkpoint(model, (sd / "model.ckpt").string());

  std::vector<const domains::DomainDataset*> grid{&suite.source_test};
  if (suite.has_target) grid.push_back(&suite.target_test);
  const auto report = protection::evaluate_authorization(model, grid, cfg.patch);
  json rep;
  rep["authorized_acc"] = report.authorized_acc;
  json cells = json::array();
  for (const auto& c : report.unauthorized) {
    json cell;
    cell["domain"] = c.domain;
    cell["patched"] = c.patched;
    cell["acc"] = c.acc;
    cells.push_back(std::move(cell));
  }
  rep["unauthorized"] = std::move(cells);
  rep["max_unauthorized"] = report.max_unauthorized;
  write_text(sd / "authorization.json", rep.dump(2) + "\n");

  json m;
  m["authorized_acc"] = report.authorized_acc;
  m["source_clean_acc"] = report.unauthorized.at(0).acc;
  if (suite.has_target) {
    m["target_patched_acc"] = report.unauthorized.at(1).acc;
    m["target_clean_acc"] = report.unauthorized.at(2).acc;
  }
  m["max_unauthorized"] = report.max_unauthorized;
  return m;
}

}  // namespace

std::string fresh_dir(const std::string& output_dir, const std::string& prefix) {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  localtime_r(&t, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  const std::string base = prefix + "-" + stamp;
  fs::path dir = fs::path(output_dir) / base;
  for (int n = 2; fs::exists(dir); ++n) {
    dir = fs::path(output_dir) / (base + "-" + std::to_string(n));
  }
  fs::create_directories(dir);
  return dir.string();
}

RunArtifacts run_experiment(const ExperimentConfig& config) {
  config.validate();
  std::string output_dir = config.output_dir;
  if (const char* env = std::getenv("NTL_OUTPUT_DIR"); env && *env) output_dir = env;
  if (const char* env = std::getenv("NTL_THREADS"); env && *env) {
    Eigen::setNbThreads(std::max(1, std::atoi(env)));
  }

  RunArtifacts artifacts;
  const fs::path run_dir = fresh_dir(output_dir, mode_name(config.mode));
  artifacts.run_dir = run_dir.string();
  write_text(run_dir / "config.json", config.to_json_text());

  json per_seed = json::array();
  std::vector<json> seed_metrics;
  for (const auto seed : config.seeds) {
    const fs::path sd = run_dir / ("seed-" + std::to_string(seed));
    fs::create_directories(sd);
    artifacts.seed_dirs.push_back(sd.string());
    Suite suite = build_suite(config.dataset, seed);
    json m;
    switch (config.mode) {
      case Mode::kSupervised:
        m = run_supervised_seed(config, suite, seed, sd);
        break;
      case Mode::kTargetSpecified:
        m = run_target_specified_seed(config, suite, seed, sd);
        break;
      case Mode::kSourceOnly:
        m = run_source_only_seed(config, suite, seed, sd);
        break;
      case Mode::kOwnership:
        m = run_ownership_seed(config, suite, seed, sd);
        break;
      case Mode::kAuthorization:
        m = run_authorization_seed(config, suite, seed, sd);
        break;
    }
    json entry;
    entry["seed"] = seed;
    entry["metrics"] = m;
    per_seed.push_back(entry);
    seed_metrics.push_back(std::move(m));
  }

  json aggregate;
  if (!seed_metrics.empty()) {
    for (auto it = seed_metrics.front().begin(); it != seed_metrics.front().end(); ++it) {
      const std::string& key = it.key();
      std::vector<double> values;
      for (const auto& m : seed_metrics) {
        if (m.contains(key)) values.push_back(m.at(key).get<double>());
      }
      double mean = 0.0;
      for (const double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      double var = 0.0;
      for (const double v : values) var += (v - mean) * (v - mean);
      const double stddev =
          values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
      json cell;
      cell["mean"] = mean;
      cell["std"] = stddev;
      cell["values"] = values;
      aggregate[key] = std::move(cell);
    }
  }

  json summary;
  summary["mode"] = mode_name(config.mode);
  summary["seeds"] = config.seeds;
  if (config.mode == Mode::kOwnership) {
    json methods = json::array();
    std::map<std::string, int> seen;
    for (const auto& a : config.attack_list) {
      std::string key = attacks::method_name(a.method);
      const int idx = seen[key]++;
      if (idx > 0) key += "#" + std::to_string(idx + 1);
      methods.push_back(key);
    }
    summary["attack_methods"] = std::move(methods);
  }
  summary["per_seed"] = std::move(per_seed);
  summary["metrics"] = std::move(aggregate);
  artifacts.summary_json = summary.dump(2) + "\n";
  write_text(run_dir / "summary.json", artifacts.summary_json);

  const Rendered rendered = report({artifacts.run_dir});
  write_text(run_dir / "report.txt", rendered.text);
  write_text(run_dir / "report.csv", rendered.csv);
  return artifacts;
}

namespace {

std::string render_table(const std::vector<std::string>& headers,
                         const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w(headers.size());
  for (std::size_t c = 0; c < headers.size(); ++c) w[c] = headers[c].size();
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) w[c] = std::max(w[c], row[c].size());
  }
  std::ostringstream os;
  auto emit = [&os, &w](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      os << cells[c] << std::string(w[c] - cells[c].size(), ' ');
      os << (c + 1 < cells.size() ? "  " : "");
    }
    os << "\n";
  };
  emit(headers);
  std::size_t total = 0;
  for (std::size_t c = 0; c < w.size(); ++c) total += w[c] + (c + 1 < w.size() ? 2 : 0);
  os << std::string(total, '-') << "\n";
  for (const auto& row : rows) emit(row);
  return os.str();
}

std::string csv_table(const std::vector<std::string>& headers,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream os;
  auto emit = [&os](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      os << cells[c] << (c + 1 < cells.size() ? "," : "");
    }
    os << "\n";
  };
  emit(headers);
  for (const auto& row : rows) emit(row);
  return os.str();
}

struct LoadedRun {
  std::string label;
  json summary;
};

double metric_mean(const json& summary, const std::string& key) {
  return summary.at("metrics").at(key).at("mean").get<double>();
}

double metric_std(const json& summary, const std::string& key) {
  return summary.at("metrics").at(key).at("std").get<double>();
}

bool has_metric(const json& summary, const std::string& key) {
  return summary.at("metrics").contains(key);
}

std::string mean_std_cell(const json& summary, const std::string& key) {
  return fmt(metric_mean(summary, key)) + "±" + fmt(metric_std(summary, key));
}

// "patched/clean" accuracy pair, mirroring the two-row layout of the paper's
// verification tables.
std::string pair_cell(const json& summary, const std::string& prefix) {
  return fmt(metric_mean(summary, prefix + "_patched")) + "/" +
         fmt(metric_mean(summary, prefix + "_clean"));
}

}  // namespace

Rendered report(const std::vector<std::string>& run_dirs) {
  if (run_dirs.empty()) throw ConfigError("report: no run directories given");
  std::map<std::string, std::vector<LoadedRun>> by_mode;
  for (const auto& dir : run_dirs) {
    json summary;
    try {
      summary = json::parse(read_text(fs::path(dir) / "summary.json"));
    } catch (const json::exception& e) {
      throw IoError("report: bad summary.json in " + dir + ": " + e.what());
    }
    by_mode[summary.at("mode").get<std::string>()].push_back(
        {fs::path(dir).filename().string(), std::move(summary)});
  }

  Rendered out;
  std::ostringstream text, csv;
  for (auto& [mode, runs] : by_mode) {
    text << "== " << mode << " ==\n";
    if (mode == "ownership") {
      std::vector<std::string> headers{"run", "SL", "NTL"};
      const auto& methods = runs.front().summary.at("attack_methods");
      for (const auto& mth : methods) headers.push_back(mth.get<std::string>());
      std::vector<std::vector<std::string>> rows;
      std::vector<std::string> csv_headers{"run"};
      for (std::size_t c = 1; c < headers.size(); ++c) {
        csv_headers.push_back(headers[c] + "_patched");
        csv_headers.push_back(headers[c] + "_clean");
      }
      std::vector<std::vector<std::string>> csv_rows;
      for (const auto& run : runs) {
        std::vector<std::string> row{run.label, pair_cell(run.summary, "sl"),
                                     pair_cell(run.summary, "ntl")};
        std::vector<std::string> crow{run.label};
        crow.push_back(fmt(metric_mean(run.summary, "sl_patched")));
        crow.push_back(fmt(metric_mean(run.summary, "sl_clean")));
        crow.push_back(fmt(metric_mean(run.summary, "ntl_patched")));
        crow.push_back(fmt(metric_mean(run.summary, "ntl_clean")));
        for (const auto& mth : methods) {
          const std::string key = mth.get<std::string>();
          row.push_back(pair_cell(run.summary, key));
          crow.push_back(fmt(metric_mean(run.summary, key + "_patched")));
          crow.push_back(fmt(metric_mean(run.summary, key + "_clean")));
        }
        rows.push_back(std::move(row));
        csv_rows.push_back(std::move(crow));
      }
      text << render_table(headers, rows) << "\n";
      csv << csv_table(csv_headers, csv_rows) << "\n";
      continue;
    }
    // Generic accuracy matrix: one mean±std column per metric key.
    std::vector<std::string> keys;
    for (auto it = runs.front().summary.at("metrics").begin();
         it != runs.front().summary.at("metrics").end(); ++it) {
      keys.push_back(it.key());
    }
    std::vector<std::string> headers{"run"};
    headers.insert(headers.end(), keys.begin(), keys.end());
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> csv_headers{"run"};
    for (const auto& k : keys) {
      csv_headers.push_back(k + "_mean");
      csv_headers.push_back(k + "_std");
    }
    std::vector<std::vector<std::string>> csv_rows;
    for (const auto& run : runs) {
      std::vector<std::string> row{run.label};
      std::vector<std::string> crow{run.label};
      for (const auto& k : keys) {
        if (has_metric(run.summary, k)) {
          row.push_back(mean_std_cell(run.summary, k));
          crow.push_back(fmt(metric_mean(run.summary, k)));
          crow.push_back(fmt(metric_std(run.summary, k)));
        } else {
          row.push_back("-");
          crow.push_back("");
          crow.push_back("");
        }
      }
      rows.push_back(std::move(row));
      csv_rows.push_back(std::move(crow));
    }
    text << render_table(headers, rows) << "\n";
    csv << csv_table(csv_headers, csv_rows) << "\n";
  }
  out.text = text.str();
  out.csv = csv.str();
  return out;
}

}  // namespace ntl::runner
