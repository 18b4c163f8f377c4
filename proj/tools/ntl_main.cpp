#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ntl/attacks.hpp"
#include "ntl/augmentation.hpp"
#include "ntl/domains.hpp"
#include "ntl/errors.hpp"
#include "ntl/mi_probe.hpp"
#include "ntl/models.hpp"
#include "ntl/objective.hpp"
#include "ntl/protection.hpp"
#include "ntl/runner.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using ntl::runner::ExperimentConfig;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw ntl::IoError("cannot write " + path.string());
  f << text;
}

// Flags are recorded during parsing and applied after the config file loads,
// so an explicit flag always wins over the file value.
class Overrides {
 public:
  template <typename T>
  CLI::Option* add(CLI::App* cmd, const std::string& name, const std::string& desc,
                   std::function<void(ExperimentConfig&, const T&)> apply) {
    auto store = std::make_shared<T>();
    CLI::Option* opt = cmd->add_option(name, *store, desc);
    actions_.push_back([opt, store, apply = std::move(apply)](ExperimentConfig& cfg) {
      if (opt->count() > 0) apply(cfg, *store);
    });
    return opt;
  }

  void apply(ExperimentConfig& cfg) const {
    for (const auto& action : actions_) action(cfg);
  }

 private:
  std::vector<std::function<void(ExperimentConfig&)>> actions_;
};

struct ConfigCli {
  std::string config_path;
  Overrides overrides;

  ExperimentConfig resolve() const {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = ExperimentConfig::load(config_path);
    overrides.apply(cfg);
    return cfg;
  }
};

std::shared_ptr<ConfigCli> add_config_flags(CLI::App* cmd) {
  auto cli = std::make_shared<ConfigCli>();
  cmd->add_option("--config", cli->config_path, "experiment config file (JSON)");
  auto& ov = cli->overrides;
  using EC = ExperimentConfig;
  using S = std::string;
  using I = std::int64_t;
  using D = double;

  ov.add<S>(cmd, "--mode", "supervised|target-specified|source-only|ownership|authorization",
            [](EC& c, const S& v) { c.mode = ntl::runner::parse_mode(v); });
  ov.add<S>(cmd, "--dataset.kind", "synthetic|ingest",
            [](EC& c, const S& v) { c.dataset.kind = v; });
  ov.add<S>(cmd, "--dataset.root", "ingest root directory",
            [](EC& c, const S& v) { c.dataset.root = v; });
  ov.add<S>(cmd, "--dataset.name", "source dataset name",
            [](EC& c, const S& v) { c.dataset.name = v; });
  ov.add<S>(cmd, "--dataset.target_name", "target dataset name (ingest)",
            [](EC& c, const S& v) { c.dataset.target_name = v; });
  ov.add<I>(cmd, "--dataset.num_classes", "synthetic class count",
            [](EC& c, I v) { c.dataset.num_classes = v; });
  ov.add<I>(cmd, "--dataset.train_count", "train samples per domain",
            [](EC& c, I v) { c.dataset.train_count = v; });
  ov.add<I>(cmd, "--dataset.test_count", "test samples per domain",
            [](EC& c, I v) { c.dataset.test_count = v; });
  ov.add<S>(cmd, "--dataset.shift.kind",
            "identity|background_tint|additive_texture|channel_permutation",
            [](EC& c, const S& v) {
              if (v == "identity") c.dataset.shift.kind = ntl::domains::ShiftKind::kIdentity;
              else if (v == "background_tint")
                c.dataset.shift.kind = ntl::domains::ShiftKind::kBackgroundTint;
              else if (v == "additive_texture")
                c.dataset.shift.kind = ntl::domains::ShiftKind::kAdditiveTexture;
              else if (v == "channel_permutation")
                c.dataset.shift.kind = ntl::domains::ShiftKind::kChannelPermutation;
              else
                throw ntl::ConfigError("unknown shift kind: " + v);
            });
  ov.add<D>(cmd, "--dataset.shift.strength", "tint strength in (0,1]",
            [](EC& c, D v) { c.dataset.shift.strength = v; });
  ov.add<D>(cmd, "--dataset.shift.amplitude", "texture amplitude in bytes",
            [](EC& c, D v) { c.dataset.shift.amplitude = v; });
  ov.add<D>(cmd, "--dataset.shift.freq_x", "texture x frequency",
            [](EC& c, D v) { c.dataset.shift.freq_x = v; });
  ov.add<D>(cmd, "--dataset.shift.freq_y", "texture y frequency",
            [](EC& c, D v) { c.dataset.shift.freq_y = v; });
  ov.add<std::vector<int>>(cmd, "--dataset.shift.permutation", "channel permutation, 3 ints",
                           [](EC& c, const std::vector<int>& v) {
                             if (v.size() != 3) throw ntl::ConfigError("permutation needs 3 ints");
                             std::copy(v.begin(), v.end(), c.dataset.shift.permutation.begin());
                           })
      ->delimiter(',');

  ov.add<D>(cmd, "--ntl.alpha", "aux loss scale", [](EC& c, D v) { c.ntl.alpha = v; });
  ov.add<D>(cmd, "--ntl.beta", "aux loss cap", [](EC& c, D v) { c.ntl.beta = v; });
  ov.add<D>(cmd, "--ntl.alpha_prime", "MMD scale", [](EC& c, D v) { c.ntl.alpha_prime = v; });
  ov.add<D>(cmd, "--ntl.beta_prime", "MMD cap", [](EC& c, D v) { c.ntl.beta_prime = v; });
  ov.add<D>(cmd, "--ntl.learning_rate", "NTL Adam learning rate",
            [](EC& c, D v) { c.ntl.learning_rate = v; });
  ov.add<I>(cmd, "--ntl.batch_size", "NTL batch size", [](EC& c, I v) { c.ntl.batch_size = v; });
  ov.add<I>(cmd, "--ntl.epochs", "NTL epochs", [](EC& c, I v) { c.ntl.epochs = v; });
  ov.add<D>(cmd, "--ntl.kernel.mul", "bandwidth ladder multiplier",
            [](EC& c, D v) { c.ntl.kernel_cfg.mul = v; });
  ov.add<I>(cmd, "--ntl.kernel.num", "bandwidth ladder size",
            [](EC& c, I v) { c.ntl.kernel_cfg.num = v; });
  ov.add<bool>(cmd, "--ntl.probe_mi", "record per-epoch MI probe",
               [](EC& c, bool v) { c.ntl.probe_mi = v; });
  ov.add<I>(cmd, "--ntl.probe_sample_count", "representations per side for the probe",
            [](EC& c, I v) { c.ntl.probe_sample_count = v; });

  ov.add<D>(cmd, "--supervised.learning_rate", "baseline learning rate",
            [](EC& c, D v) { c.supervised.learning_rate = v; });
  ov.add<I>(cmd, "--supervised.batch_size", "baseline batch size",
            [](EC& c, I v) { c.supervised.batch_size = v; });
  ov.add<I>(cmd, "--supervised.epochs", "baseline epochs",
            [](EC& c, I v) { c.supervised.epochs = v; });

  ov.add<std::vector<double>>(cmd, "--aug.dis_list", "distance caps, comma separated",
                              [](EC& c, const std::vector<double>& v) { c.aug.dis_list = v; })
      ->delimiter(',');
  ov.add<I>(cmd, "--aug.num_directions", "freeze directions per distance",
            [](EC& c, I v) { c.aug.num_directions = v; });
  ov.add<I>(cmd, "--aug.gan_epochs", "GAN training epochs",
            [](EC& c, I v) { c.aug.gan_epochs = v; });
  ov.add<I>(cmd, "--aug.aug_epochs", "per-cell optimization epochs",
            [](EC& c, I v) { c.aug.aug_epochs = v; });
  ov.add<I>(cmd, "--aug.latent_dim", "generator noise dimension",
            [](EC& c, I v) { c.aug.latent_dim = v; });
  ov.add<I>(cmd, "--aug.batch_size", "GAN batch size", [](EC& c, I v) { c.aug.batch_size = v; });
  ov.add<D>(cmd, "--aug.learning_rate", "GAN Adam learning rate",
            [](EC& c, D v) { c.aug.learning_rate = v; });
  ov.add<D>(cmd, "--aug.beta1", "GAN Adam beta1", [](EC& c, D v) { c.aug.beta1 = v; });
  ov.add<D>(cmd, "--aug.beta2", "GAN Adam beta2", [](EC& c, D v) { c.aug.beta2 = v; });
  ov.add<D>(cmd, "--aug.mse_weight", "generator MSE regularizer weight",
            [](EC& c, D v) { c.aug.mse_weight = v; });
  ov.add<I>(cmd, "--aug.per_cell_count", "samples per (dis,dir) cell (0 = auto)",
            [](EC& c, I v) { c.aug.per_cell_count = v; });
  ov.add<D>(cmd, "--aug.kernel.mul", "aug bandwidth multiplier",
            [](EC& c, D v) { c.aug.kernel_cfg.mul = v; });
  ov.add<I>(cmd, "--aug.kernel.num", "aug bandwidth ladder size",
            [](EC& c, I v) { c.aug.kernel_cfg.num = v; });

  ov.add<int>(cmd, "--patch.v", "patch intensity increment",
              [](EC& c, int v) { c.patch.v = v; });
  ov.add<int>(cmd, "--patch.channel", "patched channel",
              [](EC& c, int v) { c.patch.channel = v; });
  ov.add<D>(cmd, "--verify_threshold", "ownership gap threshold",
            [](EC& c, D v) { c.verify_threshold = v; });
  ov.add<std::vector<std::string>>(
        cmd, "--attacks", "attack methods (ftal,rtal,ewc,au,overwrite,prune) with default budgets",
        [](EC& c, const std::vector<std::string>& v) {
          c.attack_list.clear();
          for (const auto& name : v) {
            ntl::attacks::AttackConfig a;
            a.method = ntl::attacks::parse_method(name);
            c.attack_list.push_back(a);
          }
        })
      ->delimiter(',');
  ov.add<std::vector<std::uint64_t>>(cmd, "--seeds", "run seeds, comma separated",
                                     [](EC& c, const std::vector<std::uint64_t>& v) {
                                       c.seeds = v;
                                     })
      ->delimiter(',');
  ov.add<S>(cmd, "--output_dir", "artifact root directory",
            [](EC& c, const S& v) { c.output_dir = v; });
  return cli;
}

std::uint64_t first_seed(const ExperimentConfig& cfg) {
  return cfg.seeds.empty() ? 2021 : cfg.seeds.front();
}

json verification_json(const ntl::protection::VerificationReport& r) {
  json j;
  j["acc_without_patch"] = r.acc_without_patch;
  j["acc_with_patch"] = r.acc_with_patch;
  j["gap"] = r.gap;
  j["threshold"] = r.threshold;
  j["verified"] = r.verified;
  return j;
}

void cmd_train(const ConfigCli& cli) {
  const auto cfg = cli.resolve();
  const auto artifacts = ntl::runner::run_experiment(cfg);
  std::cout << "run dir: " << artifacts.run_dir << "\n\n";
  std::cout << ntl::runner::report({artifacts.run_dir}).text;
}

void cmd_augment(const ConfigCli& cli) {
  const auto cfg = cli.resolve();
  cfg.aug.validate();
  const std::uint64_t seed = first_seed(cfg);
  auto suite = ntl::runner::build_suite(cfg.dataset, seed);
  auto aug = cfg.aug;
  aug.seed = seed;
  const fs::path out = ntl::runner::fresh_dir(cfg.output_dir, "augment");
  const auto gan = ntl::augment::train_gan(suite.source_train, aug);
  ntl::augment::save_gan(gan, (out / "gan.ckpt").string());
  const auto aux = ntl::augment::auxiliary_from_gan(gan, suite.source_train, aug);
  ntl::domains::serialize_dataset(aux, (out / "aux").string());
  json j;
  j["source"] = suite.source_train.name;
  j["aux_count"] = aux.count();
  j["dis_list"] = aug.dis_list;
  j["num_directions"] = aug.num_directions;
  j["seed"] = seed;
  write_text(out / "augment.json", j.dump(2) + "\n");
  std::cout << "augment dir: " << out.string() << "\n" << j.dump(2) << "\n";
}

void cmd_verify(const ConfigCli& cli, const std::string& model_path) {
  const auto cfg = cli.resolve();
  auto model = ntl::models::load_checkpoint(model_path);
  auto suite = ntl::runner::build_suite(cfg.dataset, first_seed(cfg));
  const auto report = ntl::protection::verify_ownership(model, suite.source_test, cfg.patch,
                                                        cfg.verify_threshold);
  std::cout << verification_json(report).dump(2) << "\n";
}

void cmd_attack(const ConfigCli& cli, const std::string& model_path) {
  const auto cfg = cli.resolve();
  if (cfg.attack_list.empty()) throw ntl::ConfigError("attack: no attacks configured");
  for (const auto& a : cfg.attack_list) a.validate();
  auto model = ntl::models::load_checkpoint(model_path);
  const std::uint64_t seed = first_seed(cfg);
  auto suite = ntl::runner::build_suite(cfg.dataset, seed);
  const auto pre = ntl::protection::verify_ownership(model, suite.source_test, cfg.patch,
                                                     cfg.verify_threshold);
  const fs::path out = ntl::runner::fresh_dir(cfg.output_dir, "attack");
  std::ostringstream lines;
  std::map<std::string, int> seen;
  for (std::size_t i = 0; i < cfg.attack_list.size(); ++i) {
    auto a = cfg.attack_list[i];
    a.seed = ntl::Rng::derive(seed, 0xA700 + static_cast<std::uint64_t>(i));
    auto attacked = ntl::attacks::run_attack(
        model, suite.source_train, a, suite.has_target ? &suite.target_train : nullptr);
    const auto post = ntl::protection::verify_ownership(attacked, suite.source_test, cfg.patch,
                                                        cfg.verify_threshold);
    std::string key = ntl::attacks::method_name(a.method);
    const int idx = seen[key]++;
    if (idx > 0) key += "#" + std::to_string(idx + 1);
    ntl::models::save_checkpoint(attacked, (out / (key + ".ckpt")).string());
    json line;
    line["method"] = ntl::attacks::method_name(a.method);
    line["key"] = key;
    line["pre"] = verification_json(pre);
    line["post"] = verification_json(post);
    if (a.method == ntl::attacks::Method::kOverwrite) {
      line["trigger_accuracy"] = ntl::attacks::trigger_accuracy(attacked, suite.source_test, a);
    }
    lines << line.dump() << "\n";
    std::cout << key << ": gap " << pre.gap << " -> " << post.gap << " (clean "
              << post.acc_without_patch << ")\n";
  }
  write_text(out / "attacks.jsonl", lines.str());
  std::cout << "attack dir: " << out.string() << "\n";
}

void cmd_probe_mi(const ConfigCli& cli, const std::string& model_path) {
  const auto cfg = cli.resolve();
  auto model = ntl::models::load_checkpoint(model_path);
  const std::uint64_t seed = first_seed(cfg);
  auto suite = ntl::runner::build_suite(cfg.dataset, seed);
  if (!suite.has_target) throw ntl::ConfigError("probe-mi: dataset has no target domain");
  const auto z0 = ntl::objective::extract_representations(
      model, suite.source_test, cfg.ntl.probe_sample_count, ntl::Rng::derive(seed, 0x9B1));
  const auto z1 = ntl::objective::extract_representations(
      model, suite.target_test, cfg.ntl.probe_sample_count, ntl::Rng::derive(seed, 0x9B2));
  const auto est = ntl::probe::probe_domain_mi(z0, z1, ntl::Rng::derive(seed, 0x9B0));
  json j;
  j["value"] = est.value;
  j["clipped"] = est.clipped;
  j["ceiling"] = std::log(2.0);
  std::cout << j.dump(2) << "\n";
}

void cmd_report(const std::vector<std::string>& dirs, const std::string& csv_path) {
  const auto rendered = ntl::runner::report(dirs);
  std::cout << rendered.text;
  if (!csv_path.empty()) write_text(csv_path, rendered.csv);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"non-transferable learning: training, protection, attacks, reporting"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "run a full experiment for the configured mode");
  auto train_cli = add_config_flags(train);
  train->callback([train_cli] { cmd_train(*train_cli); });

  auto* augment = app.add_subcommand("augment", "train the GAN and emit the auxiliary dataset");
  auto augment_cli = add_config_flags(augment);
  augment->callback([augment_cli] { cmd_augment(*augment_cli); });

  auto* verify = app.add_subcommand("verify", "patch-gap ownership verification of a checkpoint");
  auto verify_cli = add_config_flags(verify);
  auto verify_model = std::make_shared<std::string>();
  verify->add_option("--model", *verify_model, "model checkpoint")->required();
  verify->callback([verify_cli, verify_model] { cmd_verify(*verify_cli, *verify_model); });

  auto* attack = app.add_subcommand("attack", "run the configured attacks against a checkpoint");
  auto attack_cli = add_config_flags(attack);
  auto attack_model = std::make_shared<std::string>();
  attack->add_option("--model", *attack_model, "model checkpoint")->required();
  attack->callback([attack_cli, attack_model] { cmd_attack(*attack_cli, *attack_model); });

  auto* probe = app.add_subcommand("probe-mi", "estimate domain MI of a checkpoint's features");
  auto probe_cli = add_config_flags(probe);
  auto probe_model = std::make_shared<std::string>();
  probe->add_option("--model", *probe_model, "model checkpoint")->required();
  probe->callback([probe_cli, probe_model] { cmd_probe_mi(*probe_cli, *probe_model); });

  auto* report = app.add_subcommand("report", "render tables for completed run directories");
  auto report_dirs = std::make_shared<std::vector<std::string>>();
  auto report_csv = std::make_shared<std::string>();
  report->add_option("dirs", *report_dirs, "run directories");
  report->add_option("--csv", *report_csv, "also write the CSV tables to this file");
  report->callback([report_dirs, report_csv] { cmd_report(*report_dirs, *report_csv); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ntl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ntl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
