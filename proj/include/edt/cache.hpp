#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "edt/common.hpp"

namespace edt {

using CacheKey = std::array<uint8_t, 32>;

// Disk-backed embedding store. Layout: <dir>/manifest.json with
// {backend, d_L, count} plus shard.bin holding fixed-width records of
// 32-byte key, 4-byte little-endian length, then length float32 values.
class EmbeddingCache {
 public:
  // Opens or creates. An existing manifest must match backend_name; a known
  // d_L must match too (pass 0 to adopt the manifest's width).
  EmbeddingCache(std::string dir, std::string backend_name, int d_l);

  std::optional<std::vector<float>> lookup(const CacheKey& key) const;
  // Inserting an existing key with an identical vector is a no-op; a
  // different vector for the same key is an error.
  void insert(const CacheKey& key, const std::vector<float>& vec);

  int count() const { return static_cast<int>(entries_.size()); }
  int dim() const { return d_l_; }
  const std::string& backend_name() const { return backend_name_; }

 private:
  void write_manifest() const;
  std::string dir_;
  std::string backend_name_;
  int d_l_ = 0;
  std::map<CacheKey, std::vector<float>> entries_;
};

}  // namespace edt
