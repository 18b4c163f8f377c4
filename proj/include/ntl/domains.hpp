#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ntl/rng.hpp"
#include "ntl/tensor.hpp"

namespace ntl::domains {

// Labeled image dataset. Pixels are integer byte values in [0, 255] stored
// channel-major per image (C, H, W); model input conversion divides by 255.
struct DomainDataset {
  std::string name;
  std::int64_t num_classes = 0;
  std::int64_t channels = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> pixels;  // count * channels * height * width
  std::vector<std::uint16_t> labels;
  // Optional per-sample origin tags (e.g. "dis=0.3,dir=1" for generated
  // auxiliary data); either empty or one entry per sample.
  std::vector<std::string> provenance;

  std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }
  std::int64_t image_size() const { return channels * height * width; }
  const std::uint8_t* image(std::int64_t i) const { return pixels.data() + i * image_size(); }
  std::uint8_t* image(std::int64_t i) { return pixels.data() + i * image_size(); }

  // Checks geometry, label range, and class balance (most populous class at
  // most 1.2x the least populous). Throws ConfigError on violation.
  void validate() const;
};

// Ownership patch: at every pixel whose row or column index is even, add `v`
// to one channel and clamp to 255.
struct PatchSpec {
  int v = 20;
  int channel = 0;
};

enum class ShiftKind { kIdentity, kBackgroundTint, kAdditiveTexture, kChannelPermutation };

// Label-preserving distribution shift applied to the clean renderer output.
struct ShiftSpec {
  ShiftKind kind = ShiftKind::kBackgroundTint;
  // background_tint: fraction in (0, 1]; dark pixels receive the full tint
  // color, bright pixels are left nearly untouched, so glyph shape survives.
  double strength = 1.0;
  // additive_texture: sinusoid amplitude in bytes, at most 80.
  double amplitude = 40.0;
  double freq_x = 0.31;
  double freq_y = 0.17;
  // channel_permutation: permutation of {0, 1, 2}.
  std::array<int, 3> permutation{2, 0, 1};

  void validate() const;  // throws InvalidShiftError
  std::string describe() const;
};

struct SyntheticSpec {
  std::uint64_t seed = 2021;
  std::int64_t num_classes = 10;
  std::int64_t train_count = 8000;  // per domain
  std::int64_t test_count = 1000;   // per domain
  ShiftSpec shift;
  void validate() const;
};

// Source plus shifted-target pair drawn from disjoint sample streams.
std::pair<DomainDataset, DomainDataset> make_synthetic_domain_pair(std::uint64_t seed,
                                                                   const ShiftSpec& shift,
                                                                   std::int64_t count,
                                                                   std::int64_t num_classes = 10);

struct SyntheticSuite {
  DomainDataset source_train, source_test, target_train, target_test;
};
SyntheticSuite make_synthetic_suite(const SyntheticSpec& spec);

// Returns a copy with the patch applied to every image; the name records the
// patch so provenance survives serialization.
DomainDataset apply_patch(const DomainDataset& ds, const PatchSpec& patch);

// Loads a dataset by name. "synthetic" generates from the parameters in
// <root>/synthetic.json (or defaults when absent) and returns the source
// domain. Any other name expects <root> to contain a serialized dataset
// (manifest.json + images.bin + labels.bin) or an IDX image/label pair
// (files ending in images-idx3-ubyte / labels-idx1-ubyte); IDX grayscale
// images are replicated to three channels and zero-padded to 32x32.
// Throws UnknownDatasetError / MissingFileError / ChecksumMismatchError.
DomainDataset ingest_dataset(const std::string& name, const std::string& root);

void serialize_dataset(const DomainDataset& ds, const std::string& dir);
DomainDataset load_dataset(const std::string& dir);

// (N, C, H, W) batch scaled to [0, 1]; `idx` selects rows.
Tensor to_unit_tensor(const DomainDataset& ds, const std::vector<std::int64_t>& idx);
Tensor to_unit_tensor(const DomainDataset& ds);
std::vector<std::uint16_t> gather_labels(const DomainDataset& ds,
                                         const std::vector<std::int64_t>& idx);

// Seeded class-balanced subset of size n.
DomainDataset subset(const DomainDataset& ds, std::int64_t n, std::uint64_t seed);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n);

}  // namespace ntl::domains
