#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ntl/attacks.hpp"
#include "ntl/augmentation.hpp"
#include "ntl/domains.hpp"
#include "ntl/objective.hpp"

namespace ntl::runner {

enum class Mode { kSupervised, kTargetSpecified, kSourceOnly, kOwnership, kAuthorization };

Mode parse_mode(const std::string& name);  // unknown -> ConfigError
std::string mode_name(Mode m);

// Where the experiment's domains come from. "synthetic" renders the built-in
// pair; "ingest" loads serialized/IDX data from `root` and splits off
// `test_count` samples per domain (stratified, seeded).
struct DatasetSpec {
  std::string kind = "synthetic";
  std::string root;
  std::string name = "synthetic";
  std::string target_name;  // ingest only; required when the mode needs a target
  std::int64_t num_classes = 10;
  std::int64_t train_count = 1200;
  std::int64_t test_count = 400;
  domains::ShiftSpec shift;
};

struct ExperimentConfig {
  Mode mode = Mode::kTargetSpecified;
  DatasetSpec dataset;
  objective::NtlConfig ntl;
  objective::SupervisedOptions supervised;
  augment::AugConfig aug;
  domains::PatchSpec patch;
  double verify_threshold = 0.5;
  std::vector<attacks::AttackConfig> attack_list;
  std::vector<std::uint64_t> seeds{2021, 2022, 2023};
  std::string output_dir = "runs";

  // Throws ConfigError listing every violated field.
  void validate() const;
  // Canonical form: serialize -> parse -> serialize is byte-identical.
  std::string to_json_text() const;
  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig load(const std::string& path);
};

struct Suite {
  domains::DomainDataset source_train, source_test, target_train, target_test;
  bool has_target = false;
};

// Builds the four datasets for one run seed (synthetic render or ingest+split).
Suite build_suite(const DatasetSpec& spec, std::uint64_t seed);

// Creates <output_dir>/<prefix>-<timestamp>[-n]; run directories are
// append-only, so a collision picks a fresh suffix instead of reusing.
std::string fresh_dir(const std::string& output_dir, const std::string& prefix);

struct RunArtifacts {
  std::string run_dir;
  std::vector<std::string> seed_dirs;
  std::string summary_json;
};

// Dispatches to the mode's pipeline; writes config snapshot, per-seed
// artifacts (history, checkpoints, reports), summary.json, and rendered
// tables under a fresh timestamped directory. NTL_OUTPUT_DIR overrides the
// output directory, NTL_THREADS the linear-algebra thread cap.
RunArtifacts run_experiment(const ExperimentConfig& config);

struct Rendered {
  std::string text;
  std::string csv;
};

// Renders the tables for completed run directories from their stored
// summaries. Empty list or incomplete directory -> ConfigError / IoError.
Rendered report(const std::vector<std::string>& run_dirs);

}  // namespace ntl::runner
