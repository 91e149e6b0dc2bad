#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "xforge/tensor.hpp"

namespace xforge {

// Named-tensor container, the on-disk format for classifier/optimizer
// checkpoints and the persisted shapes dataset.
//
// Layout (little-endian): magic "XFTN", version u16, count u32, then per
// tensor: name length u16 + UTF-8 name, rank u8, extents u32 each,
// raw f32 payload.
struct TensorFile {
  static constexpr uint16_t kVersion = 1;
  std::vector<std::pair<std::string, Tensor>> entries;

  void put(const std::string& name, Tensor t) {
    for (auto& [n, v] : entries)
      if (n == name) {
        v = std::move(t);
        return;
      }
    entries.emplace_back(name, std::move(t));
  }
  bool has(const std::string& name) const {
    for (const auto& [n, v] : entries)
      if (n == name) return true;
    return false;
  }
  const Tensor& get(const std::string& name) const;
};

void save_tensor_file(const TensorFile& f, const std::string& path);
TensorFile load_tensor_file(const std::string& path);

std::vector<uint8_t> serialize_tensor_file(const TensorFile& f);
TensorFile parse_tensor_file(const std::vector<uint8_t>& bytes);

}  // namespace xforge
