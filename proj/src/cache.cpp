#include "edt/cache.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace edt {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string shard_path(const std::string& dir) { return dir + "/shard.bin"; }
std::string manifest_path(const std::string& dir) { return dir + "/manifest.json"; }

}  // namespace

EmbeddingCache::EmbeddingCache(std::string dir, std::string backend_name, int d_l)
    : dir_(std::move(dir)), backend_name_(std::move(backend_name)), d_l_(d_l) {
  fs::create_directories(dir_);
  if (fs::exists(manifest_path(dir_))) {
    std::ifstream in(manifest_path(dir_));
    json m = json::parse(in, nullptr, false);
    if (m.is_discarded()) throw DataError("unreadable cache manifest in " + dir_);
    std::string stored = m.value("backend", "");
    int stored_dl = m.value("d_L", 0);
    if (stored != backend_name_) {
      throw DataError("cache in " + dir_ + " belongs to backend '" + stored +
                      "', not '" + backend_name_ + "'");
    }
    if (d_l_ == 0) {
      d_l_ = stored_dl;
    } else if (stored_dl != d_l_) {
      throw DataError("cache d_L " + std::to_string(stored_dl) +
                      " does not match configured " + std::to_string(d_l_));
    }
  }
  if (fs::exists(shard_path(dir_))) {
    std::ifstream in(shard_path(dir_), std::ios::binary);
    while (true) {
      CacheKey key;
      if (!in.read(reinterpret_cast<char*>(key.data()), 32)) break;
      uint32_t len = 0;
      if (!in.read(reinterpret_cast<char*>(&len), 4)) {
        throw DataError("truncated cache record in " + dir_);
      }
      if (d_l_ != 0 && static_cast<int>(len) != d_l_) {
        throw DataError("cache record width " + std::to_string(len) +
                        " does not match manifest d_L " + std::to_string(d_l_));
      }
      std::vector<float> vec(len);
      if (!in.read(reinterpret_cast<char*>(vec.data()), 4 * len)) {
        throw DataError("truncated cache record in " + dir_);
      }
      entries_[key] = std::move(vec);
    }
  }
}

std::optional<std::vector<float>> EmbeddingCache::lookup(const CacheKey& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void EmbeddingCache::insert(const CacheKey& key, const std::vector<float>& vec) {
  if (d_l_ == 0) d_l_ = static_cast<int>(vec.size());
  if (static_cast<int>(vec.size()) != d_l_) {
    throw DataError("embedding width " + std::to_string(vec.size()) +
                    " does not match cache d_L " + std::to_string(d_l_));
  }
  for (float v : vec) {
    if (!std::isfinite(v)) throw DataError("non-finite embedding value");
  }
  auto it = entries_.find(key);
  if (it != entries_.end()) {
    if (it->second != vec) throw DataError("conflicting vectors for one cache key");
    return;
  }
  {
    std::ofstream out(shard_path(dir_), std::ios::binary | std::ios::app);
    if (!out) throw DataError("cannot append to " + shard_path(dir_));
    out.write(reinterpret_cast<const char*>(key.data()), 32);
    uint32_t len = static_cast<uint32_t>(vec.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(reinterpret_cast<const char*>(vec.data()), 4 * len);
  }
  entries_[key] = vec;
  write_manifest();
}

void EmbeddingCache::write_manifest() const {
  json m;
  m["backend"] = backend_name_;
  m["d_L"] = d_l_;
  m["count"] = count();
  std::string tmp = manifest_path(dir_) + ".tmp";
  {
    std::ofstream out(tmp);
    out << m.dump(2) << "\n";
  }
  fs::rename(tmp, manifest_path(dir_));
}

}  // namespace edt
