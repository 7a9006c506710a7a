#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "edt/backend.hpp"
#include "edt/cache.hpp"
#include "edt/corpus.hpp"

namespace edt {

// One generated item as parsed from a chat response.
struct GeneratedItem {
  std::string title;
  std::string brand;
  std::string date;
  std::string price;
  std::vector<std::string> categories;
  std::string description;
};

struct GenerationRecord {
  std::string prompt;
  std::string raw_response;
  std::vector<GeneratedItem> items;
  int attempts = 0;
};

// Front door for all model traffic: cache-through embeddings and
// schema-checked generation with parse retries.
class Gateway {
 public:
  // cache_dir empty -> in-memory only (no persistence).
  Gateway(Backend& backend, const std::string& cache_dir, int parse_retries = 3);

  // Pure function of (backend identity, text). Cache hits skip the backend.
  std::vector<float> embed(const std::string& text);

  // Renders of the same text against this backend hit the same cache slot.
  static CacheKey cache_key(const std::string& backend_name, const std::string& text);

  // Asks for expected_count items and parses the strict array-of-objects
  // format. Malformed array entries are dropped; a response with no usable
  // entries is retried. Surplus entries are truncated, shortfall is allowed.
  GenerationRecord chat_generate(const std::string& prompt, int expected_count);

  // Free-text chat (summaries, analyses). No output schema.
  std::string chat_text(const std::string& prompt, ChatKind kind);

  int embed_calls() const { return embed_calls_; }
  int dim() const;

 private:
  Backend& backend_;
  std::optional<EmbeddingCache> cache_;
  int parse_retries_;
  int embed_calls_ = 0;
};

// Parses a chat response against the generation schema. Exposed for tests.
std::vector<GeneratedItem> parse_generation(const std::string& response);

}  // namespace edt
