#include "ntl/serial.hpp"

#include <cstring>
#include <fstream>

#include "ntl/errors.hpp"

namespace ntl::serial {

namespace {

void write_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  f.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ofstream& f, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  f.write(reinterpret_cast<const char*>(b), 8);
}

void write_str(std::ofstream& f, const std::string& s) {
  write_u64(f, s.size());
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::ifstream& f) {
  unsigned char b[8];
  f.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::string read_str(std::ifstream& f) {
  const auto n = read_u64(f);
  std::string s(n, '\0');
  f.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

}  // namespace

void write_container(const std::string& path, const std::string& kind, const std::string& meta_json,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(kMagic, 8);
  write_u32(f, kFormatVersion);
  write_str(f, kind);
  write_str(f, meta_json);
  write_u32(f, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_str(f, name);
    write_u32(f, static_cast<std::uint32_t>(t->ndim()));
    for (int i = 0; i < t->ndim(); ++i) write_u64(f, static_cast<std::uint64_t>(t->dim(i)));
    static_assert(sizeof(double) == 8);
    f.write(reinterpret_cast<const char*>(t->data()),
            static_cast<std::streamsize>(t->size() * 8));
  }
  if (!f) throw IoError("short write to checkpoint: " + path);
}

Container read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFileError("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("not a checkpoint file (bad magic): " + path);
  }
  const auto version = read_u32(f);
  if (version != kFormatVersion) {
    throw IoError("unsupported checkpoint format version " + std::to_string(version));
  }
  Container c;
  c.kind = read_str(f);
  c.meta_json = read_str(f);
  const auto n = read_u32(f);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = read_str(f);
    const auto ndim = read_u32(f);
    std::vector<std::int64_t> shape(ndim);
    for (auto& d : shape) d = static_cast<std::int64_t>(read_u64(f));
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
    if (!f) throw IoError("truncated checkpoint: " + path);
    c.tensors.emplace(name, std::move(t));
  }
  return c;
}

}  // namespace ntl::serial
