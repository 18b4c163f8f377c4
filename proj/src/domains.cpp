#include "ntl/domains.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ntl/errors.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace ntl::domains {

namespace {

constexpr std::int64_t kImageSide = 32;

std::uint8_t clamp_byte(double v) {
  if (v < 0.0) return 0;
  if (v > 255.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v));
}

// Seven-segment encodings for digits 0-9; segment order a b c d e f g.
constexpr std::uint8_t kSegments[10] = {
    0b1111110,  // 0: a b c d e f
    0b0110000,  // 1: b c
    0b1101101,  // 2: a b d e g
    0b1111001,  // 3: a b c d g
    0b0110011,  // 4: b c f g
    0b1011011,  // 5: a c d f g
    0b1011111,  // 6: a c d e f g
    0b1110000,  // 7: a b c
    0b1111111,  // 8
    0b1111011,  // 9: a b c d f g
};

void fill_rect(std::vector<std::uint8_t>& mask, std::int64_t x0, std::int64_t y0, std::int64_t x1,
               std::int64_t y1) {
  for (std::int64_t y = y0; y < y1; ++y) {
    for (std::int64_t x = x0; x < x1; ++x) {
      mask[static_cast<std::size_t>(y * kImageSide + x)] = 1;
    }
  }
}

// Renders one digit glyph with jittered placement, stroke width, and
// intensities into a 3x32x32 byte image.
void render_glyph(std::uint8_t* out, std::uint16_t digit, Rng& rng) {
  const std::int64_t ox = rng.uniform_int(7) - 3;
  const std::int64_t oy = rng.uniform_int(7) - 3;
  const std::int64_t t = 2 + rng.uniform_int(2);
  const double fg = rng.uniform(205.0, 255.0);
  const double bg = rng.uniform(15.0, 45.0);
  const std::int64_t x0 = 10 + ox, y0 = 5 + oy, w = 12, h = 22;
  const std::int64_t ymid = y0 + h / 2;

  std::vector<std::uint8_t> mask(kImageSide * kImageSide, 0);
  const std::uint8_t seg = kSegments[digit];
  if (seg & 0b1000000) fill_rect(mask, x0, y0, x0 + w, y0 + t);                      // a
  if (seg & 0b0100000) fill_rect(mask, x0 + w - t, y0, x0 + w, ymid);                // b
  if (seg & 0b0010000) fill_rect(mask, x0 + w - t, ymid, x0 + w, y0 + h);            // c
  if (seg & 0b0001000) fill_rect(mask, x0, y0 + h - t, x0 + w, y0 + h);              // d
  if (seg & 0b0000100) fill_rect(mask, x0, ymid, x0 + t, y0 + h);                    // e
  if (seg & 0b0000010) fill_rect(mask, x0, y0, x0 + t, ymid);                        // f
  if (seg & 0b0000001) fill_rect(mask, x0, ymid - t / 2, x0 + w, ymid - t / 2 + t);  // g

  for (std::int64_t y = 0; y < kImageSide; ++y) {
    for (std::int64_t x = 0; x < kImageSide; ++x) {
      const bool on = mask[static_cast<std::size_t>(y * kImageSide + x)] != 0;
      const double base = on ? fg : bg;
      for (std::int64_t c = 0; c < 3; ++c) {
        const double v = base + rng.normal(0.0, 6.0);
        out[(c * kImageSide + y) * kImageSide + x] = clamp_byte(v);
      }
    }
  }
}

void apply_shift(std::uint8_t* img, const ShiftSpec& shift) {
  const std::int64_t hw = kImageSide * kImageSide;
  switch (shift.kind) {
    case ShiftKind::kIdentity:
      return;
    case ShiftKind::kBackgroundTint: {
      // Dark pixels receive the full tint, bright pixels almost none, so the
      // glyph keeps its contrast (and the red channel is untouched entirely).
      static constexpr double kTint[3] = {0.0, 140.0, 200.0};
      for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t i = 0; i < hw; ++i) {
          std::uint8_t& p = img[c * hw + i];
          const double v = static_cast<double>(p);
          p = clamp_byte(v + shift.strength * kTint[c] * (255.0 - v) / 255.0);
        }
      }
      return;
    }
    case ShiftKind::kAdditiveTexture: {
      static constexpr double kPhase[3] = {0.0, 2.1, 4.2};
      for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t y = 0; y < kImageSide; ++y) {
          for (std::int64_t x = 0; x < kImageSide; ++x) {
            std::uint8_t& p = img[(c * kImageSide + y) * kImageSide + x];
            const double s = std::sin(2.0 * std::numbers::pi *
                                          (shift.freq_x * static_cast<double>(x) +
                                           shift.freq_y * static_cast<double>(y)) +
                                      kPhase[c]);
            p = clamp_byte(static_cast<double>(p) + shift.amplitude * s);
          }
        }
      }
      return;
    }
    case ShiftKind::kChannelPermutation: {
      std::uint8_t tmp[3];
      for (std::int64_t i = 0; i < hw; ++i) {
        for (int c = 0; c < 3; ++c) tmp[c] = img[shift.permutation[static_cast<std::size_t>(c)] * hw + i];
        for (int c = 0; c < 3; ++c) img[c * hw + i] = tmp[c];
      }
      return;
    }
  }
}

DomainDataset render_dataset(const std::string& name, std::uint64_t seed, std::int64_t count,
                             std::int64_t num_classes, const ShiftSpec* shift) {
  if (num_classes < 2 || num_classes > 10) {
    throw ConfigError("synthetic dataset: num_classes must be in [2, 10]");
  }
  if (count < num_classes) throw ConfigError("synthetic dataset: count must be >= num_classes");
  DomainDataset ds;
  ds.name = name;
  ds.num_classes = num_classes;
  ds.channels = 3;
  ds.height = kImageSide;
  ds.width = kImageSide;
  ds.labels.resize(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    ds.labels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(i % num_classes);
  }
  Rng rng(seed);
  rng.shuffle(ds.labels);
  ds.pixels.resize(static_cast<std::size_t>(count * ds.image_size()));
  for (std::int64_t i = 0; i < count; ++i) {
    render_glyph(ds.image(i), ds.labels[static_cast<std::size_t>(i)], rng);
    if (shift) apply_shift(ds.image(i), *shift);
  }
  ds.validate();
  return ds;
}

std::string checksum_hex(const std::uint8_t* data, std::size_t n) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(data, n)));
  return std::string(buf);
}

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

void DomainDataset::validate() const {
  if (num_classes < 2) throw ConfigError("dataset: num_classes must be at least 2");
  if (channels < 1 || height < 1 || width < 1) throw ConfigError("dataset: bad geometry");
  if (labels.empty()) throw ConfigError("dataset: empty");
  if (pixels.size() != static_cast<std::size_t>(count() * image_size())) {
    throw ConfigError("dataset: pixel buffer does not match count * image_size");
  }
  std::vector<std::int64_t> hist(static_cast<std::size_t>(num_classes), 0);
  for (const auto l : labels) {
    if (l >= num_classes) throw ConfigError("dataset: label out of range");
    ++hist[l];
  }
  const auto [lo, hi] = std::minmax_element(hist.begin(), hist.end());
  if (*lo == 0 || static_cast<double>(*hi) > 1.2 * static_cast<double>(*lo)) {
    throw ConfigError("dataset: class balance worse than 1.2");
  }
  if (!provenance.empty() && provenance.size() != labels.size()) {
    throw ConfigError("dataset: provenance must be empty or one entry per sample");
  }
}

void ShiftSpec::validate() const {
  std::string bad;
  switch (kind) {
    case ShiftKind::kIdentity:
      break;
    case ShiftKind::kBackgroundTint:
      if (!(strength > 0.0) || strength > 1.0) bad += "strength ";
      break;
    case ShiftKind::kAdditiveTexture:
      if (!(amplitude > 0.0) || amplitude > 80.0) bad += "amplitude ";
      if (!(freq_x > 0.0) || freq_x >= 1.0) bad += "freq_x ";
      if (!(freq_y > 0.0) || freq_y >= 1.0) bad += "freq_y ";
      break;
    case ShiftKind::kChannelPermutation: {
      std::array<int, 3> sorted = permutation;
      std::sort(sorted.begin(), sorted.end());
      if (sorted != std::array<int, 3>{0, 1, 2}) bad += "permutation ";
      if (permutation == std::array<int, 3>{0, 1, 2}) bad += "permutation(identity) ";
      break;
    }
  }
  if (!bad.empty()) {
    throw InvalidShiftError("shift would destroy or not change label information: " + bad);
  }
}

std::string ShiftSpec::describe() const {
  std::ostringstream os;
  switch (kind) {
    case ShiftKind::kIdentity:
      os << "identity";
      break;
    case ShiftKind::kBackgroundTint:
      os << "background_tint(strength=" << strength << ")";
      break;
    case ShiftKind::kAdditiveTexture:
      os << "additive_texture(amplitude=" << amplitude << ")";
      break;
    case ShiftKind::kChannelPermutation:
      os << "channel_permutation(" << permutation[0] << permutation[1] << permutation[2] << ")";
      break;
  }
  return os.str();
}

void SyntheticSpec::validate() const {
  std::string bad;
  if (num_classes < 2 || num_classes > 10) bad += "num_classes ";
  if (train_count < num_classes) bad += "train_count ";
  if (test_count < num_classes) bad += "test_count ";
  if (!bad.empty()) throw ConfigError("synthetic spec: invalid fields: " + bad);
  shift.validate();
}

std::pair<DomainDataset, DomainDataset> make_synthetic_domain_pair(std::uint64_t seed,
                                                                   const ShiftSpec& shift,
                                                                   std::int64_t count,
                                                                   std::int64_t num_classes) {
  shift.validate();
  DomainDataset source =
      render_dataset("synthetic-source", Rng::derive(seed, 1), count, num_classes, nullptr);
  DomainDataset target = render_dataset("synthetic-target:" + shift.describe(),
                                        Rng::derive(seed, 2), count, num_classes, &shift);
  return {std::move(source), std::move(target)};
}

SyntheticSuite make_synthetic_suite(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticSuite s;
  const std::string tname = "synthetic-target:" + spec.shift.describe();
  s.source_train = render_dataset("synthetic-source", Rng::derive(spec.seed, 1), spec.train_count,
                                  spec.num_classes, nullptr);
  s.target_train = render_dataset(tname, Rng::derive(spec.seed, 2), spec.train_count,
                                  spec.num_classes, &spec.shift);
  s.source_test = render_dataset("synthetic-source-test", Rng::derive(spec.seed, 3),
                                 spec.test_count, spec.num_classes, nullptr);
  s.target_test = render_dataset(tname + "-test", Rng::derive(spec.seed, 4), spec.test_count,
                                 spec.num_classes, &spec.shift);
  return s;
}

DomainDataset apply_patch(const DomainDataset& ds, const PatchSpec& patch) {
  if (patch.channel < 0 || patch.channel >= ds.channels) {
    throw ConfigError("patch: channel out of range");
  }
  DomainDataset out = ds;
  out.name = ds.name + "+patch(v=" + std::to_string(patch.v) +
             ",c=" + std::to_string(patch.channel) + ")";
  const std::int64_t hw = ds.height * ds.width;
  for (std::int64_t i = 0; i < out.count(); ++i) {
    std::uint8_t* img = out.image(i) + patch.channel * hw;
    for (std::int64_t y = 0; y < ds.height; ++y) {
      for (std::int64_t x = 0; x < ds.width; ++x) {
        if (y % 2 == 0 || x % 2 == 0) {
          std::uint8_t& p = img[y * ds.width + x];
          p = clamp_byte(static_cast<double>(p) + static_cast<double>(patch.v));
        }
      }
    }
  }
  return out;
}

void serialize_dataset(const DomainDataset& ds, const std::string& dir) {
  ds.validate();
  fs::create_directories(dir);
  const fs::path root(dir);
  {
    std::ofstream f(root / "images.bin", std::ios::binary);
    if (!f) throw IoError("serialize_dataset: cannot write images.bin");
    f.write(reinterpret_cast<const char*>(ds.pixels.data()),
            static_cast<std::streamsize>(ds.pixels.size()));
  }
  std::vector<std::uint8_t> lab(ds.labels.size() * 2);
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    lab[2 * i] = static_cast<std::uint8_t>(ds.labels[i] & 0xff);
    lab[2 * i + 1] = static_cast<std::uint8_t>(ds.labels[i] >> 8);
  }
  {
    std::ofstream f(root / "labels.bin", std::ios::binary);
    if (!f) throw IoError("serialize_dataset: cannot write labels.bin");
    f.write(reinterpret_cast<const char*>(lab.data()), static_cast<std::streamsize>(lab.size()));
  }
  json m;
  m["format"] = "ntl-dataset-v1";
  m["name"] = ds.name;
  m["num_classes"] = ds.num_classes;
  m["channels"] = ds.channels;
  m["height"] = ds.height;
  m["width"] = ds.width;
  m["count"] = ds.count();
  m["images_checksum"] = checksum_hex(ds.pixels.data(), ds.pixels.size());
  m["labels_checksum"] = checksum_hex(lab.data(), lab.size());
  if (!ds.provenance.empty()) m["provenance"] = ds.provenance;
  std::ofstream f(root / "manifest.json");
  if (!f) throw IoError("serialize_dataset: cannot write manifest.json");
  f << m.dump(2) << "\n";
}

namespace {

std::vector<std::uint8_t> read_binary(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw MissingFileError("missing file: " + p.string());
  f.seekg(0, std::ios::end);
  const auto n = static_cast<std::size_t>(f.tellg());
  f.seekg(0);
  std::vector<std::uint8_t> data(n);
  f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n));
  return data;
}

std::uint32_t be32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

DomainDataset load_idx(const std::string& name, const fs::path& images_path,
                       const fs::path& labels_path) {
  const auto img = read_binary(images_path);
  const auto lab = read_binary(labels_path);
  if (img.size() < 16 || be32(img.data()) != 0x00000803) {
    throw UnknownDatasetError("idx: bad image file magic in " + images_path.string());
  }
  if (lab.size() < 8 || be32(lab.data()) != 0x00000801) {
    throw UnknownDatasetError("idx: bad label file magic in " + labels_path.string());
  }
  const std::int64_t n = be32(img.data() + 4);
  const std::int64_t rows = be32(img.data() + 8);
  const std::int64_t cols = be32(img.data() + 12);
  if (static_cast<std::int64_t>(be32(lab.data() + 4)) != n) {
    throw UnknownDatasetError("idx: image/label count mismatch");
  }
  if (rows > kImageSide || cols > kImageSide) {
    throw UnknownDatasetError("idx: images larger than 32x32 are not supported");
  }
  if (img.size() != static_cast<std::size_t>(16 + n * rows * cols)) {
    throw UnknownDatasetError("idx: truncated image file");
  }
  DomainDataset ds;
  ds.name = name;
  ds.channels = 3;
  ds.height = kImageSide;
  ds.width = kImageSide;
  ds.labels.resize(static_cast<std::size_t>(n));
  std::uint16_t max_label = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    ds.labels[static_cast<std::size_t>(i)] = lab[static_cast<std::size_t>(8 + i)];
    max_label = std::max(max_label, ds.labels[static_cast<std::size_t>(i)]);
  }
  ds.num_classes = max_label + 1;
  ds.pixels.assign(static_cast<std::size_t>(n * ds.image_size()), 0);
  const std::int64_t py = (kImageSide - rows) / 2;
  const std::int64_t px = (kImageSide - cols) / 2;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::uint8_t* src = img.data() + 16 + i * rows * cols;
    std::uint8_t* dst = ds.image(i);
    for (std::int64_t y = 0; y < rows; ++y) {
      for (std::int64_t x = 0; x < cols; ++x) {
        const std::uint8_t v = src[y * cols + x];
        for (std::int64_t c = 0; c < 3; ++c) {
          dst[(c * kImageSide + py + y) * kImageSide + px + x] = v;
        }
      }
    }
  }
  ds.validate();
  return ds;
}

}  // namespace

DomainDataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream mf(root / "manifest.json");
  if (!mf) throw MissingFileError("missing file: " + (root / "manifest.json").string());
  json m;
  try {
    mf >> m;
  } catch (const json::exception& e) {
    throw IoError("manifest.json: parse error: " + std::string(e.what()));
  }
  if (m.value("format", "") != "ntl-dataset-v1") {
    throw UnknownDatasetError("manifest.json: unknown format field");
  }
  DomainDataset ds;
  ds.name = m.at("name").get<std::string>();
  ds.num_classes = m.at("num_classes").get<std::int64_t>();
  ds.channels = m.at("channels").get<std::int64_t>();
  ds.height = m.at("height").get<std::int64_t>();
  ds.width = m.at("width").get<std::int64_t>();
  const auto count = m.at("count").get<std::int64_t>();
  ds.pixels = read_binary(root / "images.bin");
  const auto lab = read_binary(root / "labels.bin");
  if (checksum_hex(ds.pixels.data(), ds.pixels.size()) != m.at("images_checksum")) {
    throw ChecksumMismatchError("images.bin does not match manifest checksum");
  }
  if (checksum_hex(lab.data(), lab.size()) != m.at("labels_checksum")) {
    throw ChecksumMismatchError("labels.bin does not match manifest checksum");
  }
  if (lab.size() != static_cast<std::size_t>(count) * 2) {
    throw IoError("labels.bin has wrong size");
  }
  ds.labels.resize(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    ds.labels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(
        lab[static_cast<std::size_t>(2 * i)] | (lab[static_cast<std::size_t>(2 * i + 1)] << 8));
  }
  if (m.contains("provenance")) {
    ds.provenance = m.at("provenance").get<std::vector<std::string>>();
  }
  ds.validate();
  return ds;
}

DomainDataset ingest_dataset(const std::string& name, const std::string& root) {
  const fs::path rootp(root);
  if (name == "synthetic") {
    SyntheticSpec spec;
    const fs::path cfg = rootp / "synthetic.json";
    if (fs::exists(cfg)) {
      std::ifstream f(cfg);
      json j;
      try {
        f >> j;
      } catch (const json::exception& e) {
        throw IoError("synthetic.json: parse error: " + std::string(e.what()));
      }
      spec.seed = j.value("seed", spec.seed);
      spec.num_classes = j.value("num_classes", spec.num_classes);
      spec.train_count = j.value("train_count", spec.train_count);
    }
    auto [source, target] = make_synthetic_domain_pair(spec.seed, spec.shift, spec.train_count,
                                                       spec.num_classes);
    (void)target;
    return source;
  }
  if (fs::exists(rootp / "manifest.json")) {
    return load_dataset(root);
  }
  if (!fs::exists(rootp)) throw MissingFileError("dataset root does not exist: " + root);
  // Look for an IDX pair, preferring files whose basename starts with `name`.
  std::vector<fs::path> images, labels;
  for (const auto& e : fs::directory_iterator(rootp)) {
    const std::string base = e.path().filename().string();
    if (base.find("images-idx3-ubyte") != std::string::npos) images.push_back(e.path());
    if (base.find("labels-idx1-ubyte") != std::string::npos) labels.push_back(e.path());
  }
  auto prefer = [&name](std::vector<fs::path>& v) {
    for (const auto& p : v) {
      if (p.filename().string().rfind(name, 0) == 0) return p;
    }
    return v.front();
  };
  if (!images.empty() && !labels.empty()) {
    if ((images.size() > 1 || labels.size() > 1)) {
      bool ok = false;
      for (const auto& p : images) {
        if (p.filename().string().rfind(name, 0) == 0) ok = true;
      }
      if (!ok) {
        throw UnknownDatasetError("idx: multiple candidate files in " + root +
                                  " and none match name '" + name + "'");
      }
    }
    return load_idx(name, prefer(images), prefer(labels));
  }
  throw UnknownDatasetError("no dataset named '" + name + "' under " + root);
}

Tensor to_unit_tensor(const DomainDataset& ds, const std::vector<std::int64_t>& idx) {
  Tensor t({static_cast<std::int64_t>(idx.size()), ds.channels, ds.height, ds.width});
  const std::int64_t sz = ds.image_size();
  double* out = t.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::uint8_t* img = ds.image(idx[i]);
    for (std::int64_t j = 0; j < sz; ++j) {
      out[static_cast<std::int64_t>(i) * sz + j] = static_cast<double>(img[j]) / 255.0;
    }
  }
  return t;
}

Tensor to_unit_tensor(const DomainDataset& ds) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(ds.count()));
  for (std::int64_t i = 0; i < ds.count(); ++i) idx[static_cast<std::size_t>(i)] = i;
  return to_unit_tensor(ds, idx);
}

std::vector<std::uint16_t> gather_labels(const DomainDataset& ds,
                                         const std::vector<std::int64_t>& idx) {
  std::vector<std::uint16_t> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = ds.labels[static_cast<std::size_t>(idx[i])];
  return out;
}

DomainDataset subset(const DomainDataset& ds, std::int64_t n, std::uint64_t seed) {
  if (n < ds.num_classes || n > ds.count()) throw ConfigError("subset: bad requested size");
  std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::int64_t i = 0; i < ds.count(); ++i) {
    by_class[ds.labels[static_cast<std::size_t>(i)]].push_back(i);
  }
  Rng rng(Rng::derive(seed, 77));
  std::vector<std::int64_t> chosen;
  chosen.reserve(static_cast<std::size_t>(n));
  const std::int64_t per = n / ds.num_classes;
  std::int64_t rem = n % ds.num_classes;
  for (auto& cls : by_class) {
    rng.shuffle(cls);
    std::int64_t take = per + (rem > 0 ? 1 : 0);
    if (rem > 0) --rem;
    if (take > static_cast<std::int64_t>(cls.size())) {
      throw ConfigError("subset: class too small for balanced subset");
    }
    chosen.insert(chosen.end(), cls.begin(), cls.begin() + take);
  }
  rng.shuffle(chosen);
  DomainDataset out;
  out.name = ds.name + "#subset" + std::to_string(n);
  out.num_classes = ds.num_classes;
  out.channels = ds.channels;
  out.height = ds.height;
  out.width = ds.width;
  out.labels.reserve(chosen.size());
  out.pixels.reserve(chosen.size() * static_cast<std::size_t>(ds.image_size()));
  for (const auto i : chosen) {
    out.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
    const std::uint8_t* img = ds.image(i);
    out.pixels.insert(out.pixels.end(), img, img + ds.image_size());
    if (!ds.provenance.empty()) out.provenance.push_back(ds.provenance[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace ntl::domains
