#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "ntl/domains.hpp"
#include "ntl/errors.hpp"
#include "ntl/rng.hpp"

using namespace ntl;
using namespace ntl::domains;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("ntl-domains-" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::uint8_t oracle_clamp(double v) {
  if (v < 0.0) return 0;
  if (v > 255.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v));
}

std::vector<std::int64_t> label_histogram(const DomainDataset& ds) {
  std::vector<std::int64_t> hist(static_cast<std::size_t>(ds.num_classes), 0);
  for (const auto l : ds.labels) ++hist[l];
  return hist;
}

DomainDataset tiny_manual_dataset() {
  DomainDataset ds;
  ds.name = "manual";
  ds.num_classes = 2;
  ds.channels = 3;
  ds.height = 2;
  ds.width = 2;
  ds.labels = {0, 1};
  ds.pixels.assign(2 * 3 * 2 * 2, 0);
  return ds;
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
}

void write_file(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

// 5x5 IDX pair: `n` images whose pixel (y, x) is base+y*5+x, labels cycling
// through `num_labels`.
void write_idx_pair(const fs::path& dir, const std::string& stem, std::int64_t n,
                    std::int64_t num_labels) {
  std::vector<std::uint8_t> img;
  write_be32(img, 0x00000803);
  write_be32(img, static_cast<std::uint32_t>(n));
  write_be32(img, 5);
  write_be32(img, 5);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t p = 0; p < 25; ++p) {
      img.push_back(static_cast<std::uint8_t>(10 * i + p));
    }
  }
  std::vector<std::uint8_t> lab;
  write_be32(lab, 0x00000801);
  write_be32(lab, static_cast<std::uint32_t>(n));
  for (std::int64_t i = 0; i < n; ++i) lab.push_back(static_cast<std::uint8_t>(i % num_labels));
  write_file(dir / (stem + "-images-idx3-ubyte"), img);
  write_file(dir / (stem + "-labels-idx1-ubyte"), lab);
}

}  // namespace

TEST_CASE("synthetic rendering is deterministic in the seed") {
  ShiftSpec shift;
  const auto [s1, t1] = make_synthetic_domain_pair(5, shift, 40, 10);
  const auto [s2, t2] = make_synthetic_domain_pair(5, shift, 40, 10);
  CHECK(s1.pixels == s2.pixels);
  CHECK(s1.labels == s2.labels);
  CHECK(t1.pixels == t2.pixels);
  CHECK(s1.name == "synthetic-source");
  CHECK(t1.name == "synthetic-target:" + shift.describe());

  const auto [s3, t3] = make_synthetic_domain_pair(6, shift, 40, 10);
  CHECK(s1.pixels != s3.pixels);
  CHECK(t1.pixels != t3.pixels);
}

TEST_CASE("synthetic labels are exactly balanced") {
  ShiftSpec shift;
  const auto [source, target] = make_synthetic_domain_pair(9, shift, 40, 10);
  for (const auto n : label_histogram(source)) CHECK(n == 4);
  for (const auto n : label_histogram(target)) CHECK(n == 4);
  CHECK(source.pixels != target.pixels);  // disjoint sample streams plus shift
}

TEST_CASE("synthetic rejects bad geometry requests") {
  ShiftSpec shift;
  CHECK_THROWS_AS(make_synthetic_domain_pair(1, shift, 5, 10), ConfigError);
  CHECK_THROWS_AS(make_synthetic_domain_pair(1, shift, 40, 1), ConfigError);
  CHECK_THROWS_AS(make_synthetic_domain_pair(1, shift, 40, 11), ConfigError);
}

TEST_CASE("make_synthetic_suite renders four datasets from disjoint streams") {
  SyntheticSpec spec;
  spec.seed = 3;
  spec.train_count = 30;
  spec.test_count = 20;
  const SyntheticSuite suite = make_synthetic_suite(spec);
  CHECK(suite.source_train.count() == 30);
  CHECK(suite.source_test.count() == 20);
  CHECK(suite.target_train.count() == 30);
  CHECK(suite.target_test.count() == 20);
  CHECK(suite.source_train.name == "synthetic-source");
  CHECK(suite.source_test.name == "synthetic-source-test");
  CHECK(suite.target_train.name == "synthetic-target:" + spec.shift.describe());
  // Different streams: train and test must not share renders.
  const std::size_t n = std::min(suite.source_train.pixels.size(), suite.source_test.pixels.size());
  CHECK(!std::equal(suite.source_train.pixels.begin(), suite.source_train.pixels.begin() + n,
                    suite.source_test.pixels.begin()));
}

TEST_CASE("shift validation rejects degenerate parameters") {
  ShiftSpec s;
  SUBCASE("identity is always valid") {
    s.kind = ShiftKind::kIdentity;
    CHECK_NOTHROW(s.validate());
  }
  SUBCASE("tint strength bounds") {
    s.kind = ShiftKind::kBackgroundTint;
    s.strength = 0.0;
    CHECK_THROWS_AS(s.validate(), InvalidShiftError);
    s.strength = 1.5;
    CHECK_THROWS_AS(s.validate(), InvalidShiftError);
    s.strength = 1.0;
    CHECK_NOTHROW(s.validate());
  }
  SUBCASE("texture bounds") {
    s.kind = ShiftKind::kAdditiveTexture;
    s.amplitude = 100.0;
    CHECK_THROWS_AS(s.validate(), InvalidShiftError);
    s.amplitude = 40.0;
    s.freq_x = 0.0;
    CHECK_THROWS_AS(s.validate(), InvalidShiftError);
    s.freq_x = 0.31;
    s.freq_y = 1.0;
    CHECK_THROWS_AS(s.validate(), InvalidShiftError);
  }
  SUBCASE("permutation must be a proper non-identity permutation") {
    s.kind = ShiftKind::kChannelPermutation;
    s.permutation = {0, 0, 1};
    CHECK_THROWS_AS(s.validate(), InvalidShiftError);
    s.permutation = {0, 1, 2};
    CHECK_THROWS_AS(s.validate(), InvalidShiftError);
    s.permutation = {1, 2, 0};
    CHECK_NOTHROW(s.validate());
  }
}

TEST_CASE("background tint transforms the clean render pixel by pixel") {
  ShiftSpec identity;
  identity.kind = ShiftKind::kIdentity;
  ShiftSpec tint;
  tint.kind = ShiftKind::kBackgroundTint;
  tint.strength = 0.6;
  const auto [s0, clean] = make_synthetic_domain_pair(11, identity, 20, 10);
  const auto [s1, tinted] = make_synthetic_domain_pair(11, tint, 20, 10);
  CHECK(s0.pixels == s1.pixels);

  const double kTint[3] = {0.0, 140.0, 200.0};
  const std::int64_t hw = clean.height * clean.width;
  for (std::int64_t i = 0; i < clean.count(); ++i) {
    const std::uint8_t* base = clean.image(i);
    const std::uint8_t* got = tinted.image(i);
    for (std::int64_t c = 0; c < 3; ++c) {
      for (std::int64_t p = 0; p < hw; ++p) {
        const double v = static_cast<double>(base[c * hw + p]);
        const std::uint8_t want = oracle_clamp(v + 0.6 * kTint[c] * (255.0 - v) / 255.0);
        REQUIRE(got[c * hw + p] == want);
      }
    }
  }
}

TEST_CASE("channel permutation reorders channel planes") {
  ShiftSpec identity;
  identity.kind = ShiftKind::kIdentity;
  ShiftSpec perm;
  perm.kind = ShiftKind::kChannelPermutation;
  perm.permutation = {2, 0, 1};
  const auto [s0, clean] = make_synthetic_domain_pair(12, identity, 10, 10);
  const auto [s1, permuted] = make_synthetic_domain_pair(12, perm, 10, 10);

  const std::int64_t hw = clean.height * clean.width;
  for (std::int64_t i = 0; i < clean.count(); ++i) {
    const std::uint8_t* base = clean.image(i);
    const std::uint8_t* got = permuted.image(i);
    for (int c = 0; c < 3; ++c) {
      for (std::int64_t p = 0; p < hw; ++p) {
        REQUIRE(got[c * hw + p] == base[perm.permutation[static_cast<std::size_t>(c)] * hw + p]);
      }
    }
  }
}

TEST_CASE("additive texture adds a per-channel phase-shifted sinusoid") {
  ShiftSpec identity;
  identity.kind = ShiftKind::kIdentity;
  ShiftSpec tex;
  tex.kind = ShiftKind::kAdditiveTexture;
  tex.amplitude = 25.0;
  tex.freq_x = 0.2;
  tex.freq_y = 0.4;
  const auto [s0, clean] = make_synthetic_domain_pair(13, identity, 10, 10);
  const auto [s1, textured] = make_synthetic_domain_pair(13, tex, 10, 10);

  const double kPhase[3] = {0.0, 2.1, 4.2};
  for (std::int64_t i = 0; i < clean.count(); ++i) {
    const std::uint8_t* base = clean.image(i);
    const std::uint8_t* got = textured.image(i);
    for (std::int64_t c = 0; c < 3; ++c) {
      for (std::int64_t y = 0; y < 32; ++y) {
        for (std::int64_t x = 0; x < 32; ++x) {
          const std::int64_t p = (c * 32 + y) * 32 + x;
          const double s = std::sin(2.0 * std::numbers::pi *
                                        (0.2 * static_cast<double>(x) + 0.4 * static_cast<double>(y)) +
                                    kPhase[c]);
          REQUIRE(got[p] == oracle_clamp(static_cast<double>(base[p]) + 25.0 * s));
        }
      }
    }
  }
}

TEST_CASE("dataset validation catches structural defects") {
  DomainDataset ds = tiny_manual_dataset();
  CHECK_NOTHROW(ds.validate());

  SUBCASE("label out of range") {
    ds.labels[1] = 7;
    CHECK_THROWS_AS(ds.validate(), ConfigError);
  }
  SUBCASE("missing class") {
    ds.labels = {0, 0};
    CHECK_THROWS_AS(ds.validate(), ConfigError);
  }
  SUBCASE("imbalance beyond 1.2x") {
    ds.num_classes = 2;
    ds.labels = {0, 0, 0, 1, 1};
    ds.pixels.assign(5 * 3 * 2 * 2, 0);
    CHECK_THROWS_AS(ds.validate(), ConfigError);
  }
  SUBCASE("pixel buffer size mismatch") {
    ds.pixels.pop_back();
    CHECK_THROWS_AS(ds.validate(), ConfigError);
  }
  SUBCASE("ragged provenance") {
    ds.provenance = {"only-one"};
    CHECK_THROWS_AS(ds.validate(), ConfigError);
  }
  SUBCASE("empty dataset") {
    ds.labels.clear();
    ds.pixels.clear();
    CHECK_THROWS_AS(ds.validate(), ConfigError);
  }
}

TEST_CASE("apply_patch bumps the even-parity pixels of one channel") {
  DomainDataset ds = tiny_manual_dataset();
  // Image 0, channel 1 holds recognizable values; channel 2 tests clamping.
  ds.image(0)[1 * 4 + 0] = 100;  // (y=0, x=0)
  ds.image(0)[1 * 4 + 1] = 101;  // (y=0, x=1)
  ds.image(0)[1 * 4 + 2] = 102;  // (y=1, x=0)
  ds.image(0)[1 * 4 + 3] = 103;  // (y=1, x=1)

  PatchSpec patch;
  patch.v = 20;
  patch.channel = 1;
  const DomainDataset out = apply_patch(ds, patch);

  CHECK(out.image(0)[1 * 4 + 0] == 120);
  CHECK(out.image(0)[1 * 4 + 1] == 121);
  CHECK(out.image(0)[1 * 4 + 2] == 122);
  CHECK(out.image(0)[1 * 4 + 3] == 103);  // odd row and odd column: untouched
  // Other channels untouched.
  for (std::int64_t p = 0; p < 4; ++p) {
    CHECK(out.image(0)[p] == ds.image(0)[p]);
    CHECK(out.image(0)[2 * 4 + p] == ds.image(0)[2 * 4 + p]);
  }
  CHECK(out.name == ds.name + "+patch(v=20,c=1)");
  CHECK(out.labels == ds.labels);

  SUBCASE("clamps at 255") {
    ds.image(1)[1 * 4 + 0] = 250;
    const DomainDataset clamped = apply_patch(ds, patch);
    CHECK(clamped.image(1)[1 * 4 + 0] == 255);
  }
  SUBCASE("negative v clamps at 0") {
    PatchSpec down;
    down.v = -200;
    down.channel = 1;
    const DomainDataset dark = apply_patch(ds, down);
    CHECK(dark.image(0)[1 * 4 + 0] == 0);
    CHECK(dark.image(0)[1 * 4 + 3] == 103);
  }
  SUBCASE("channel out of range") {
    PatchSpec bad;
    bad.channel = 3;
    CHECK_THROWS_AS(apply_patch(ds, bad), ConfigError);
  }
}

TEST_CASE("serialize and load round trip") {
  TempDir tmp("roundtrip");
  ShiftSpec shift;
  auto [ds, target] = make_synthetic_domain_pair(21, shift, 50, 10);
  ds.provenance.assign(static_cast<std::size_t>(ds.count()), "");
  for (std::int64_t i = 0; i < ds.count(); ++i) {
    ds.provenance[static_cast<std::size_t>(i)] = "tag" + std::to_string(i % 3);
  }
  const std::string dir = (tmp.path / "ds").string();
  serialize_dataset(ds, dir);

  const DomainDataset back = load_dataset(dir);
  CHECK(back.name == ds.name);
  CHECK(back.num_classes == ds.num_classes);
  CHECK(back.channels == ds.channels);
  CHECK(back.height == ds.height);
  CHECK(back.width == ds.width);
  CHECK(back.pixels == ds.pixels);
  CHECK(back.labels == ds.labels);
  CHECK(back.provenance == ds.provenance);
}

TEST_CASE("load_dataset rejects corruption") {
  TempDir tmp("corrupt");
  ShiftSpec shift;
  const auto [ds, target] = make_synthetic_domain_pair(22, shift, 20, 10);
  const std::string dir = (tmp.path / "ds").string();
  serialize_dataset(ds, dir);

  SUBCASE("flipped image byte fails the checksum") {
    std::fstream f(tmp.path / "ds" / "images.bin",
                   std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(100);
    char b;
    f.seekg(100);
    f.get(b);
    b = static_cast<char>(b ^ 0x5a);
    f.seekp(100);
    f.put(b);
    f.close();
    CHECK_THROWS_AS(load_dataset(dir), ChecksumMismatchError);
  }
  SUBCASE("flipped label byte fails the checksum") {
    std::fstream f(tmp.path / "ds" / "labels.bin",
                   std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(3);
    f.put(static_cast<char>(0x7f));
    f.close();
    CHECK_THROWS_AS(load_dataset(dir), ChecksumMismatchError);
  }
  SUBCASE("missing manifest") {
    fs::remove(tmp.path / "ds" / "manifest.json");
    CHECK_THROWS_AS(load_dataset(dir), MissingFileError);
  }
  SUBCASE("missing images file") {
    fs::remove(tmp.path / "ds" / "images.bin");
    CHECK_THROWS_AS(load_dataset(dir), MissingFileError);
  }
  SUBCASE("foreign manifest format") {
    std::ofstream f(tmp.path / "ds" / "manifest.json");
    f << "{\"format\": \"something-else\"}\n";
    f.close();
    CHECK_THROWS_AS(load_dataset(dir), UnknownDatasetError);
  }
}

TEST_CASE("ingest_dataset loads idx pairs with padding and channel replication") {
  TempDir tmp("idx");
  write_idx_pair(tmp.path, "probe", 12, 3);
  const DomainDataset ds = ingest_dataset("probe", tmp.path.string());
  CHECK(ds.count() == 12);
  CHECK(ds.num_classes == 3);
  CHECK(ds.channels == 3);
  CHECK(ds.height == 32);
  CHECK(ds.width == 32);
  // 5x5 content centered at offset (13, 13), replicated across channels.
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t y = 0; y < 5; ++y) {
      for (std::int64_t x = 0; x < 5; ++x) {
        REQUIRE(ds.image(1)[(c * 32 + 13 + y) * 32 + 13 + x] == 10 + 5 * y + x);
      }
    }
    CHECK(ds.image(1)[(c * 32 + 0) * 32 + 0] == 0);
    CHECK(ds.image(1)[(c * 32 + 31) * 32 + 31] == 0);
  }
  CHECK(ds.labels[0] == 0);
  CHECK(ds.labels[4] == 1);
}

TEST_CASE("ingest_dataset error paths") {
  TempDir tmp("errors");
  SUBCASE("root does not exist") {
    CHECK_THROWS_AS(ingest_dataset("x", (tmp.path / "nope").string()), MissingFileError);
  }
  SUBCASE("no recognizable files") {
    CHECK_THROWS_AS(ingest_dataset("x", tmp.path.string()), UnknownDatasetError);
  }
  SUBCASE("bad idx magic") {
    std::vector<std::uint8_t> img;
    write_be32(img, 0xdeadbeef);
    write_file(tmp.path / "x-images-idx3-ubyte", img);
    std::vector<std::uint8_t> lab;
    write_be32(lab, 0x00000801);
    write_be32(lab, 0);
    write_file(tmp.path / "x-labels-idx1-ubyte", lab);
    CHECK_THROWS_AS(ingest_dataset("x", tmp.path.string()), UnknownDatasetError);
  }
  SUBCASE("image and label counts disagree") {
    std::vector<std::uint8_t> img;
    write_be32(img, 0x00000803);
    write_be32(img, 2);
    write_be32(img, 2);
    write_be32(img, 2);
    for (int i = 0; i < 8; ++i) img.push_back(1);
    write_file(tmp.path / "x-images-idx3-ubyte", img);
    std::vector<std::uint8_t> lab;
    write_be32(lab, 0x00000801);
    write_be32(lab, 3);
    lab.push_back(0);
    lab.push_back(1);
    lab.push_back(0);
    write_file(tmp.path / "x-labels-idx1-ubyte", lab);
    CHECK_THROWS_AS(ingest_dataset("x", tmp.path.string()), UnknownDatasetError);
  }
  SUBCASE("multiple idx pairs need a matching name") {
    write_idx_pair(tmp.path, "alpha", 6, 3);
    write_idx_pair(tmp.path, "beta", 6, 3);
    CHECK_THROWS_AS(ingest_dataset("gamma", tmp.path.string()), UnknownDatasetError);
    const DomainDataset ds = ingest_dataset("beta", tmp.path.string());
    CHECK(ds.name == "beta");
  }
  SUBCASE("manifest directory wins over idx") {
    ShiftSpec shift;
    const auto [ds, target] = make_synthetic_domain_pair(23, shift, 20, 10);
    serialize_dataset(ds, tmp.path.string());
    const DomainDataset back = ingest_dataset(ds.name, tmp.path.string());
    CHECK(back.pixels == ds.pixels);
  }
}

TEST_CASE("ingest_dataset synthetic honors synthetic.json") {
  TempDir tmp("synthjson");
  {
    std::ofstream f(tmp.path / "synthetic.json");
    f << "{\"seed\": 77, \"num_classes\": 5, \"train_count\": 60}\n";
  }
  const DomainDataset ds = ingest_dataset("synthetic", tmp.path.string());
  CHECK(ds.count() == 60);
  CHECK(ds.num_classes == 5);
  CHECK(ds.name == "synthetic-source");
  ShiftSpec shift;
  const auto [expect, target] = make_synthetic_domain_pair(77, shift, 60, 5);
  CHECK(ds.pixels == expect.pixels);
}

TEST_CASE("subset draws a seeded class-balanced sample") {
  ShiftSpec shift;
  auto [ds, target] = make_synthetic_domain_pair(31, shift, 60, 10);
  ds.provenance.resize(static_cast<std::size_t>(ds.count()));
  for (std::int64_t i = 0; i < ds.count(); ++i) {
    ds.provenance[static_cast<std::size_t>(i)] =
        "label=" + std::to_string(ds.labels[static_cast<std::size_t>(i)]);
  }

  const DomainDataset a = subset(ds, 25, 40);
  CHECK(a.count() == 25);
  const auto hist = label_histogram(a);
  // 25 = 2 per class with the remainder going to the first five classes.
  for (std::size_t c = 0; c < 5; ++c) CHECK(hist[c] == 3);
  for (std::size_t c = 5; c < 10; ++c) CHECK(hist[c] == 2);

  // Provenance rows stay aligned with their samples.
  for (std::int64_t i = 0; i < a.count(); ++i) {
    CHECK(a.provenance[static_cast<std::size_t>(i)] ==
          "label=" + std::to_string(a.labels[static_cast<std::size_t>(i)]));
  }

  const DomainDataset b = subset(ds, 25, 40);
  CHECK(a.pixels == b.pixels);
  CHECK(a.labels == b.labels);
  const DomainDataset c = subset(ds, 25, 41);
  CHECK(a.pixels != c.pixels);

  CHECK_THROWS_AS(subset(ds, 5, 40), ConfigError);
  CHECK_THROWS_AS(subset(ds, 61, 40), ConfigError);
}

TEST_CASE("to_unit_tensor scales bytes into the unit interval") {
  ShiftSpec shift;
  const auto [ds, target] = make_synthetic_domain_pair(32, shift, 20, 10);
  const std::vector<std::int64_t> idx = {3, 0, 7};
  const Tensor t = to_unit_tensor(ds, idx);
  CHECK(t.shape() == std::vector<std::int64_t>{3, 3, 32, 32});
  const std::int64_t sz = ds.image_size();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::uint8_t* img = ds.image(idx[i]);
    for (std::int64_t j = 0; j < sz; ++j) {
      const double v = t[static_cast<std::int64_t>(i) * sz + j];
      REQUIRE(v == static_cast<double>(img[j]) / 255.0);
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
  }
  const auto labels = gather_labels(ds, idx);
  CHECK(labels.size() == 3);
  CHECK(labels[0] == ds.labels[3]);
  CHECK(labels[1] == ds.labels[0]);
  CHECK(labels[2] == ds.labels[7]);

  const Tensor all = to_unit_tensor(ds);
  CHECK(all.dim(0) == ds.count());
}

TEST_CASE("fnv1a64 matches the reference vectors") {
  CHECK(fnv1a64(nullptr, 0) == 0xcbf29ce484222325ULL);
  const std::uint8_t a[] = {'a'};
  CHECK(fnv1a64(a, 1) == 0xaf63dc4c8601ec8cULL);
  const std::uint8_t foobar[] = {'f', 'o', 'o', 'b', 'a', 'r'};
  CHECK(fnv1a64(foobar, 6) == 0x85944171f73967e8ULL);
}
