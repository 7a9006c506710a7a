#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "edt/common.hpp"

namespace edt {

enum class ChatKind { generate_items, summarize, analyze };

class Backend {
 public:
  virtual ~Backend() = default;
  // Stable identity mixed into cache keys, e.g. "mock:42".
  virtual std::string name() const = 0;
  // Embedding width d_L; <= 0 means unknown until the first call.
  virtual int embedding_dim() const = 0;
  virtual std::vector<float> embed_text(const std::string& text) = 0;
  // kind is a hint for offline backends; remote backends ignore it.
  virtual std::string chat(const std::string& prompt, ChatKind kind) = 0;
};

// Deterministic offline backend. Embeddings are unit-norm bags of seeded
// per-token feature vectors, so texts sharing vocabulary land close in cosine
// similarity. Chat output recombines attribute values found in the prompt.
class MockBackend : public Backend {
 public:
  explicit MockBackend(uint64_t seed, int dim = 256);
  std::string name() const override;
  int embedding_dim() const override { return dim_; }
  std::vector<float> embed_text(const std::string& text) override;
  std::string chat(const std::string& prompt, ChatKind kind) override;

 private:
  uint64_t seed_;
  int dim_;
};

struct HttpBackendConfig {
  std::string base_url;         // e.g. https://api.example.com/v1
  std::string chat_model;
  std::string embed_model;
  std::string api_key_env = "EDT_API_KEY";
  int retries = 3;
  int backoff_ms = 250;
  int timeout_s = 60;
};

// Chat-completion and embedding calls over the common REST contract.
// Transport failures and non-2xx statuses retry with exponential backoff;
// exhausting retries raises BackendError carrying the attempt count.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  std::string name() const override;
  int embedding_dim() const override { return dim_; }
  std::vector<float> embed_text(const std::string& text) override;
  std::string chat(const std::string& prompt, ChatKind kind) override;

 private:
  std::string post_json(const std::string& path, const std::string& body);
  HttpBackendConfig config_;
  int dim_ = 0;  // learned from the first embedding response
};

}  // namespace edt
