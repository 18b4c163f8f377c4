#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ntl/tensor.hpp"

namespace ntl::serial {

// Versioned binary container: magic + format version, a kind tag, a JSON
// metadata blob, then named double tensors (dims + raw little-endian data).
inline constexpr char kMagic[8] = {'N', 'T', 'L', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kFormatVersion = 1;

void write_container(const std::string& path, const std::string& kind, const std::string& meta_json,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors);

struct Container {
  std::string kind;
  std::string meta_json;
  std::map<std::string, Tensor> tensors;
};

Container read_container(const std::string& path);

}  // namespace ntl::serial
