#pragma once

// Named-tensor container used for checkpoints and extractor weights.
//
// Layout (little-endian):
//   "DHZARCH1"                      8-byte magic
//   u32 format_version
//   u32 meta_count, then per entry: u32 key_len, key, u32 value_len, value
//   u32 tensor_count, then per entry: u32 name_len, name, i32 n, c, h, w, float32[numel]
// Entries are written in sorted key order, so equal contents give equal bytes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "dehaze/tensor.hpp"

namespace dehaze {

inline constexpr std::uint32_t kArchiveFormatVersion = 1;

class Archive {
 public:
  void set_meta(const std::string& key, std::string value) { meta_[key] = std::move(value); }
  std::optional<std::string> meta(const std::string& key) const;
  /// Throws IoError naming the key if absent.
  const std::string& require_meta(const std::string& key) const;

  void put(const std::string& name, Tensor<float> tensor) { tensors_[name] = std::move(tensor); }
  bool has(const std::string& name) const { return tensors_.count(name) != 0; }
  /// Throws IoError naming the tensor if absent.
  const Tensor<float>& get(const std::string& name) const;

  const std::map<std::string, Tensor<float>>& tensors() const noexcept { return tensors_; }
  const std::map<std::string, std::string>& metadata() const noexcept { return meta_; }

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  std::map<std::string, std::string> meta_;
  std::map<std::string, Tensor<float>> tensors_;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ull);

/// FNV-1a of a file's bytes.
std::uint64_t file_fingerprint(const std::filesystem::path& path);

std::string to_hex(std::uint64_t v);

}  // namespace dehaze
