#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "dualtree/errors.hpp"
#include "dualtree/gateway.hpp"

namespace dualtree::testing {

// Backend whose completions come from a callback; embeddings use the mock
// hashing rule. Counts calls.
class ScriptedBackend : public Backend {
 public:
  using Handler = std::function<std::string(const CompletionRequest&)>;

  explicit ScriptedBackend(Handler h) : handler_(std::move(h)) {}

  std::string name() const override { return "scripted"; }

  CompletionResponse complete(const CompletionRequest& req) override {
    ++completions;
    CompletionResponse r;
    r.text = handler_(req);
    r.latency_seconds = 0.25;
    return r;
  }

  std::vector<Embedding> embed(const std::vector<std::string>& texts, const std::string&) override {
    ++embed_calls;
    if (fail_embeddings) throw GatewayError("scripted embedding failure");
    std::vector<Embedding> out;
    for (const auto& t : texts) out.push_back(hashed_embedding(t));
    return out;
  }

  std::atomic<int> completions{0};
  std::atomic<int> embed_calls{0};
  bool fail_embeddings = false;

 private:
  Handler handler_;
};

inline GatewayConfig fast_config() {
  GatewayConfig c;
  c.backoff_base = std::chrono::milliseconds(1);
  return c;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  std::random_device rd;
  auto p = std::filesystem::temp_directory_path() /
           ("dualtree-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string fixture(const std::string& name) {
  return std::string(DUALTREE_FIXTURES) + "/" + name;
}

}  // namespace dualtree::testing
