#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "edt/backend.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "edt/prompts.hpp"

namespace edt {

using json = nlohmann::ordered_json;

// --- mock -------------------------------------------------------------------

MockBackend::MockBackend(uint64_t seed, int dim) : seed_(seed), dim_(dim) {
  if (dim < 8) throw UsageError("mock embedding dim too small");
}

std::string MockBackend::name() const {
  return "mock:" + std::to_string(seed_) + ":" + std::to_string(dim_);
}

std::vector<float> MockBackend::embed_text(const std::string& text) {
  std::vector<std::string> tokens = tokenize_lower(text);
  if (tokens.empty()) tokens.push_back("empty");
  std::vector<double> acc(dim_, 0.0);
  std::vector<double> tok(dim_);
  for (const std::string& t : tokens) {
    uint64_t state = fnv1a64(t) ^ (seed_ * 0x9e3779b97f4a7c15ULL);
    double norm2 = 0.0;
    for (int i = 0; i < dim_; ++i) {
      double u1 = std::max(splitmix_unit(state), 1e-15);
      double u2 = splitmix_unit(state);
      double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
      tok[i] = z;
      norm2 += z * z;
    }
    double inv = 1.0 / std::sqrt(norm2);
    for (int i = 0; i < dim_; ++i) acc[i] += tok[i] * inv;
  }
  double norm2 = 0.0;
  for (double v : acc) norm2 += v * v;
  double inv = 1.0 / std::sqrt(norm2);
  std::vector<float> out(dim_);
  for (int i = 0; i < dim_; ++i) out[i] = static_cast<float>(acc[i] * inv);
  return out;
}

namespace {

struct ItemAttrs {
  std::string title, brand, date, price, features, description;
};

// Slice [from, to) delimited by begin/end markers; returns false if absent.
bool slice(const std::string& text, size_t start, const char* begin,
           const char* end, std::string& out, size_t* next = nullptr) {
  size_t b = text.find(begin, start);
  if (b == std::string::npos) return false;
  b += std::string(begin).size();
  size_t e = text.find(end, b);
  if (e == std::string::npos) return false;
  out = text.substr(b, e - b);
  if (next) *next = e;
  return true;
}

std::vector<ItemAttrs> parse_items(const std::string& section) {
  std::vector<ItemAttrs> out;
  size_t pos = 0;
  while (true) {
    size_t start = section.find(markers::kItemAttributes, pos);
    if (start == std::string::npos) break;
    pos = start + 1;
    ItemAttrs it;
    size_t cur = start;
    if (!slice(section, cur, "name is ", "; brand is ", it.title, &cur)) continue;
    if (!slice(section, cur, "; brand is ", "; date is ", it.brand, &cur)) continue;
    if (!slice(section, cur, "; date is ", "; price is ", it.date, &cur)) continue;
    if (!slice(section, cur, "; price is ", ".\n", it.price, &cur)) continue;
    if (!slice(section, cur, "features: ", ".\n", it.features, &cur)) continue;
    size_t d = section.find("descriptions: ", cur);
    if (d == std::string::npos) continue;
    d += std::string("descriptions: ").size();
    size_t e = section.find("\n[", d);
    if (e == std::string::npos) e = section.size();
    it.description = section.substr(d, e - d);
    while (!it.description.empty() &&
           (it.description.back() == '.' || it.description.back() == '\n')) {
      it.description.pop_back();
    }
    out.push_back(std::move(it));
  }
  return out;
}

const std::set<std::string>& stopwords() {
  static const std::set<std::string> kStop = {
      "the", "a", "an", "is", "are", "in", "on", "item", "items", "has",
      "have", "following", "attributes", "name", "brand", "date", "price",
      "features", "descriptions", "and", "for", "from", "of", "to", "it",
      "with", "made", "line", "fans"};
  return kStop;
}

std::vector<std::string> top_tokens(const std::string& text, int count) {
  std::map<std::string, int> freq;
  for (const std::string& t : tokenize_lower(text)) {
    if (stopwords().count(t)) continue;
    bool digits = std::all_of(t.begin(), t.end(),
                              [](char c) { return c >= '0' && c <= '9'; });
    if (digits) continue;
    freq[t] += 1;
  }
  std::vector<std::pair<std::string, int>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (int i = 0; i < count && i < static_cast<int>(ranked.size()); ++i) {
    out.push_back(ranked[i].first);
  }
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ", ";
    out += words[i];
  }
  return out.empty() ? "nothing in particular" : out;
}

std::string mock_generate(const std::string& prompt) {
  size_t tgt = prompt.find(markers::kTargetSamples);
  std::vector<ItemAttrs> bases;
  if (tgt != std::string::npos) {
    size_t colon = prompt.find(markers::kDomainColon, tgt);
    size_t end = prompt.find(markers::kTargetEnd, tgt);
    if (colon != std::string::npos && end != std::string::npos && colon < end) {
      bases = parse_items(prompt.substr(colon, end - colon));
    }
    if (bases.empty()) {
      // No target-domain history: fall back to source samples. These stay
      // textually far from the target catalog, so downstream filtering is
      // expected to discard most of them.
      bases = parse_items(prompt.substr(0, tgt));
    }
  }
  int num = 0;
  size_t c = prompt.find(markers::kGenerateCount);
  if (c != std::string::npos) {
    num = std::atoi(prompt.c_str() + c + std::string(markers::kGenerateCount).size());
  }
  json arr = json::array();
  if (bases.empty() || num <= 0) return arr.dump();
  int n = static_cast<int>(bases.size());
  for (int k = 0; k < num; ++k) {
    const ItemAttrs& base = bases[k % n];
    const ItemAttrs& other = bases[(k + 1) % n];
    json obj;
    obj["title"] = base.title + " mk " + std::to_string(k + 1);
    obj["brand"] = other.brand;
    obj["date"] = base.date;
    obj["price"] = base.price;
    json cats = json::array();
    size_t pos = 0;
    const std::string& f = base.features;
    while (pos <= f.size()) {
      size_t comma = f.find(", ", pos);
      std::string part = f.substr(pos, comma == std::string::npos ? std::string::npos
                                                                  : comma - pos);
      if (!part.empty()) cats.push_back(part);
      if (comma == std::string::npos) break;
      pos = comma + 2;
    }
    obj["categories"] = cats;
    obj["description"] = base.description;
    arr.push_back(obj);
  }
  return arr.dump();
}

std::string mock_summarize(const std::string& prompt) {
  std::string samples;
  size_t b = prompt.find(markers::kSummarizeItems);
  if (b != std::string::npos) {
    b += std::string(markers::kSummarizeItems).size();
    size_t e = prompt.find(markers::kSummarizeEnd, b);
    samples = prompt.substr(b, e == std::string::npos ? std::string::npos : e - b);
  }
  return "Mostly drawn to " + join_words(top_tokens(samples, 6)) + " overall.";
}

std::string mock_analyze(const std::string& prompt) {
  size_t first = prompt.find(markers::kAnalyzeBlock);
  size_t second = first == std::string::npos
                      ? std::string::npos
                      : prompt.find(markers::kAnalyzeBlock, first + 1);
  std::string block_a, block_b;
  if (first != std::string::npos && second != std::string::npos) {
    size_t a0 = prompt.find(markers::kDomainAre, first);
    if (a0 != std::string::npos && a0 < second) {
      a0 += std::string(markers::kDomainAre).size();
      block_a = prompt.substr(a0, second - a0);
    }
    size_t b0 = prompt.find(markers::kDomainAre, second);
    if (b0 != std::string::npos) {
      b0 += std::string(markers::kDomainAre).size();
      size_t e = prompt.find("\nPlease note", b0);
      block_b = prompt.substr(b0, e == std::string::npos ? std::string::npos : e - b0);
    }
  }
  return "Across domains, this consumer favors " +
         join_words(top_tokens(block_a, 4)) + " alongside " +
         join_words(top_tokens(block_b, 4)) + ".";
}

}  // namespace

std::string MockBackend::chat(const std::string& prompt, ChatKind kind) {
  switch (kind) {
    case ChatKind::generate_items: return mock_generate(prompt);
    case ChatKind::summarize: return mock_summarize(prompt);
    case ChatKind::analyze: return mock_analyze(prompt);
  }
  throw UsageError("unknown chat kind");
}

// --- http -------------------------------------------------------------------

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) throw UsageError("http backend needs a base URL");
  if (config_.retries < 1) throw UsageError("http backend needs retries >= 1");
}

std::string HttpBackend::name() const {
  return "http:" + config_.base_url + ":" + config_.embed_model;
}

std::string HttpBackend::post_json(const std::string& path, const std::string& body) {
  // split scheme://host[:port] from an optional path prefix
  std::string root = config_.base_url;
  std::string prefix;
  size_t scheme = root.find("://");
  size_t slash = scheme == std::string::npos ? root.find('/')
                                             : root.find('/', scheme + 3);
  if (slash != std::string::npos) {
    prefix = root.substr(slash);
    root = root.substr(0, slash);
  }
  if (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

  httplib::Client client(root);
  client.set_connection_timeout(config_.timeout_s, 0);
  client.set_read_timeout(config_.timeout_s, 0);
  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }

  std::string last_error;
  for (int attempt = 1; attempt <= config_.retries; ++attempt) {
    auto res = client.Post(prefix + path, headers, body, "application/json");
    if (res && res->status >= 200 && res->status < 300) return res->body;
    if (res) {
      last_error = "status " + std::to_string(res->status);
    } else {
      last_error = "transport error " + httplib::to_string(res.error());
    }
    if (attempt < config_.retries) {
      std::this_thread::sleep_for(
          std::chrono::milliseconds(config_.backoff_ms << (attempt - 1)));
    }
  }
  throw BackendError("POST " + path + " failed after " +
                         std::to_string(config_.retries) + " attempts: " + last_error,
                     config_.retries);
}

std::vector<float> HttpBackend::embed_text(const std::string& text) {
  json req;
  req["model"] = config_.embed_model;
  req["input"] = json::array({text});
  std::string body = post_json("/embeddings", req.dump());
  json res = json::parse(body, nullptr, false);
  if (res.is_discarded() || !res.contains("data") || res["data"].empty() ||
      !res["data"][0].contains("embedding")) {
    throw BackendError("embedding response missing data[0].embedding", 1);
  }
  std::vector<float> out;
  for (const auto& v : res["data"][0]["embedding"]) {
    out.push_back(v.get<float>());
  }
  if (out.empty()) throw BackendError("empty embedding vector", 1);
  if (dim_ == 0) {
    dim_ = static_cast<int>(out.size());
  } else if (dim_ != static_cast<int>(out.size())) {
    throw BackendError("embedding dimension changed mid-run", 1);
  }
  return out;
}

std::string HttpBackend::chat(const std::string& prompt, ChatKind) {
  json req;
  req["model"] = config_.chat_model;
  req["messages"] = json::array({json{{"role", "user"}, {"content", prompt}}});
  req["temperature"] = 0;
  std::string body = post_json("/chat/completions", req.dump());
  json res = json::parse(body, nullptr, false);
  if (res.is_discarded() || !res.contains("choices") || res["choices"].empty()) {
    throw BackendError("chat response missing choices", 1);
  }
  const auto& msg = res["choices"][0];
  if (!msg.contains("message") || !msg["message"].contains("content")) {
    throw BackendError("chat response missing message content", 1);
  }
  return msg["message"]["content"].get<std::string>();
}

}  // namespace edt
