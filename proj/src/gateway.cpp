#include "edt/gateway.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace edt {

using json = nlohmann::json;

Gateway::Gateway(Backend& backend, const std::string& cache_dir, int parse_retries)
    : backend_(backend), parse_retries_(parse_retries) {
  if (parse_retries_ < 1) throw UsageError("gateway needs at least one attempt");
  if (!cache_dir.empty()) {
    cache_.emplace(cache_dir, backend.name(),
                   backend.embedding_dim() > 0 ? backend.embedding_dim() : 0);
  }
}

CacheKey Gateway::cache_key(const std::string& backend_name, const std::string& text) {
  return sha256_bytes(backend_name + "\x1f" + text);
}

int Gateway::dim() const {
  int d = backend_.embedding_dim();
  if (d <= 0 && cache_) d = cache_->dim();
  return d;
}

std::vector<float> Gateway::embed(const std::string& text) {
  if (text.empty()) throw UsageError("cannot embed empty text");
  CacheKey key = cache_key(backend_.name(), text);
  if (cache_) {
    if (auto hit = cache_->lookup(key)) return *hit;
  }
  std::vector<float> vec = backend_.embed_text(text);
  ++embed_calls_;
  for (float v : vec) {
    if (!std::isfinite(v)) throw BackendError("backend returned non-finite embedding", 1);
  }
  int d = backend_.embedding_dim();
  if (d > 0 && static_cast<int>(vec.size()) != d) {
    throw BackendError("backend returned width " + std::to_string(vec.size()) +
                           ", expected " + std::to_string(d),
                       1);
  }
  if (cache_) cache_->insert(key, vec);
  return vec;
}

std::vector<GeneratedItem> parse_generation(const std::string& response) {
  // tolerate markdown fences around the array
  size_t b = response.find('[');
  size_t e = response.rfind(']');
  if (b == std::string::npos || e == std::string::npos || e < b) return {};
  json arr = json::parse(response.substr(b, e - b + 1), nullptr, false);
  if (arr.is_discarded() || !arr.is_array()) return {};
  std::vector<GeneratedItem> out;
  for (const auto& obj : arr) {
    if (!obj.is_object()) continue;
    auto t = obj.find("title");
    if (t == obj.end() || !t->is_string() || t->get<std::string>().empty()) continue;
    GeneratedItem item;
    item.title = t->get<std::string>();
    auto text_field = [&obj](const char* key) -> std::string {
      auto it = obj.find(key);
      return it != obj.end() && it->is_string() ? it->get<std::string>() : "";
    };
    item.brand = text_field("brand");
    item.date = text_field("date");
    item.price = text_field("price");
    item.description = text_field("description");
    if (auto c = obj.find("categories"); c != obj.end() && c->is_array()) {
      for (const auto& v : *c) {
        if (v.is_string()) item.categories.push_back(v.get<std::string>());
      }
    }
    out.push_back(std::move(item));
  }
  return out;
}

GenerationRecord Gateway::chat_generate(const std::string& prompt, int expected_count) {
  if (expected_count < 1) throw UsageError("expected_count must be >= 1");
  GenerationRecord rec;
  rec.prompt = prompt;
  for (int attempt = 1; attempt <= parse_retries_; ++attempt) {
    rec.attempts = attempt;
    rec.raw_response = backend_.chat(prompt, ChatKind::generate_items);
    rec.items = parse_generation(rec.raw_response);
    if (!rec.items.empty()) {
      if (static_cast<int>(rec.items.size()) > expected_count) {
        rec.items.resize(expected_count);
      }
      return rec;
    }
  }
  throw BackendError("generation produced no parseable items after " +
                         std::to_string(rec.attempts) + " attempts; last response: " +
                         rec.raw_response.substr(0, 200),
                     rec.attempts);
}

std::string Gateway::chat_text(const std::string& prompt, ChatKind kind) {
  return backend_.chat(prompt, kind);
}

}  // namespace edt
