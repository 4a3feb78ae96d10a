#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "dualtree/prompts.hpp"

namespace dualtree {

using Embedding = Eigen::VectorXf;

struct CompletionRequest {
  PromptName prompt = PromptName::summarize;  // routing hint; not part of the cache key
  std::string text;
  std::string model;
  double temperature = 0.0;
  int max_tokens = 1024;
};

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct CompletionResponse {
  std::string text;
  TokenUsage usage;
  double latency_seconds = 0.0;  // time spent on this call
  bool cached = false;
  // For cache hits: latency of the live call that produced the record.
  std::optional<double> original_latency_seconds;
};

struct EmbedResult {
  std::vector<Embedding> vectors;
  double latency_seconds = 0.0;
  bool any_cached = false;
  // Sum of recorded live latencies over the cached items; empty when a
  // cached item has no recorded latency.
  std::optional<double> cached_original_latency_seconds;
  double cached_lookup_seconds = 0.0;
};

// A completion/embedding service. Implementations must be thread-safe.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  // Throws GatewayError on transport failure.
  virtual CompletionResponse complete(const CompletionRequest& req) = 0;
  virtual std::vector<Embedding> embed(const std::vector<std::string>& texts, const std::string& model) = 0;
};

// Content-addressed response store. Memory-only without a directory; with one,
// each record lives at <dir>/<key[0:2]>/<key>.json written via temp + rename.
class ResponseCache {
 public:
  explicit ResponseCache(std::optional<std::filesystem::path> dir = std::nullopt);

  std::optional<nlohmann::json> get(const std::string& key);
  void put(const std::string& key, const nlohmann::json& record);
  std::size_t size() const;

 private:
  std::optional<std::filesystem::path> dir_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, nlohmann::json> memory_;
};

std::string completion_cache_key(const CompletionRequest& req);
std::string embedding_cache_key(const std::string& model, const std::string& text);

struct GatewayConfig {
  std::string chat_model = "mock-chat";
  std::string embedding_model = "mock-embed";
  int max_attempts = 3;
  std::chrono::milliseconds backoff_base{500};
  std::size_t concurrency = 4;
  std::size_t embed_batch = 64;
  int max_output_tokens = 1024;
};

struct GatewayStats {
  std::size_t live_completions = 0;
  std::size_t cached_completions = 0;
  std::size_t live_embeddings = 0;
  std::size_t cached_embeddings = 0;
  double live_latency_seconds = 0.0;
  std::size_t failures = 0;
};

// Single entry point to the language-model backend: retries, a bounded number
// of in-flight requests, and a response cache in front of every call.
class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend, GatewayConfig cfg = {},
          std::shared_ptr<ResponseCache> cache = std::make_shared<ResponseCache>());

  CompletionResponse complete(const CompletionRequest& req);
  // Renders `name` with `bindings` and completes it with the configured model.
  CompletionResponse complete(PromptName name, const PromptBindings& bindings);

  EmbedResult embed_timed(const std::vector<std::string>& texts);
  std::vector<Embedding> embed(const std::vector<std::string>& texts) { return embed_timed(texts).vectors; }

  const GatewayConfig& config() const { return cfg_; }
  const Backend& backend() const { return *backend_; }
  GatewayStats stats() const;

 private:
  template <typename Fn>
  auto with_retries(Fn&& fn) -> decltype(fn());

  std::shared_ptr<Backend> backend_;
  GatewayConfig cfg_;
  std::shared_ptr<ResponseCache> cache_;
  std::counting_semaphore<1024> slots_;
  mutable std::mutex stats_mu_;
  GatewayStats stats_;
};

// Offline deterministic backend. Every prompt kind maps to a fixed text rule:
//   rewrite              -> the paragraph unchanged
//   entity_extract       -> capitalized spans as {"n1": {"name", "type"}} records
//   proposition_extract  -> one fact per sentence mentioning an entity
//   summarize            -> first sentence of each blank-line separated unit
//   topic                -> most frequent capitalized span
//   qa_answer            -> bridge-chained span echo (see mock_backend.cpp)
//   hierarchy_label      -> "high" above three sentences, else "low"
// Embeddings are L2-normalized hashed bags of content words.
class MockBackend : public Backend {
 public:
  static constexpr int kEmbeddingDim = 256;

  std::string name() const override { return "mock"; }
  CompletionResponse complete(const CompletionRequest& req) override;
  std::vector<Embedding> embed(const std::vector<std::string>& texts, const std::string& model) override;
};

// Capitalized-span heuristic used by the mock backend: maximal runs of
// capitalized words, possessives stripped, leading function words dropped.
std::vector<std::string> capitalized_spans(std::string_view text);
Embedding hashed_embedding(std::string_view text, int dim = MockBackend::kEmbeddingDim);

struct HttpBackendConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key;
  double timeout_seconds = 60.0;
};

// OpenAI-compatible chat-completions and embeddings over HTTP(S).
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg);
  std::string name() const override { return "live"; }
  CompletionResponse complete(const CompletionRequest& req) override;
  std::vector<Embedding> embed(const std::vector<std::string>& texts, const std::string& model) override;

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body);

  HttpBackendConfig cfg_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

}  // namespace dualtree
