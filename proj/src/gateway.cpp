#include "dualtree/gateway.hpp"

#include <fstream>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "dualtree/errors.hpp"
#include "dualtree/text.hpp"

namespace dualtree {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// RAII slot in the gateway's in-flight limit.
class SlotGuard {
 public:
  explicit SlotGuard(std::counting_semaphore<1024>& s) : s_(s) { s_.acquire(); }
  ~SlotGuard() { s_.release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  std::counting_semaphore<1024>& s_;
};

}  // namespace

ResponseCache::ResponseCache(std::optional<std::filesystem::path> dir) : dir_(std::move(dir)) {
  if (dir_) std::filesystem::create_directories(*dir_);
}

std::optional<json> ResponseCache::get(const std::string& key) {
  {
    std::lock_guard lock(mu_);
    if (auto it = memory_.find(key); it != memory_.end()) return it->second;
  }
  if (!dir_) return std::nullopt;
  const auto path = *dir_ / key.substr(0, 2) / (key + ".json");
  std::ifstream in(path);
  if (!in) return std::nullopt;
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    spdlog::warn("ignoring corrupt cache record {}", path.string());
    return std::nullopt;
  }
  std::lock_guard lock(mu_);
  memory_.emplace(key, j);
  return j;
}

void ResponseCache::put(const std::string& key, const json& record) {
  if (dir_) {
    const auto shard = *dir_ / key.substr(0, 2);
    std::filesystem::create_directories(shard);
    std::ostringstream tid;
    tid << std::this_thread::get_id();
    const auto tmp = shard / (key + ".tmp." + tid.str());
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("cannot write cache record " + tmp.string());
      out << record.dump();
    }
    std::filesystem::rename(tmp, shard / (key + ".json"));
  }
  std::lock_guard lock(mu_);
  memory_[key] = record;
}

std::size_t ResponseCache::size() const {
  std::lock_guard lock(mu_);
  return memory_.size();
}

std::string completion_cache_key(const CompletionRequest& req) {
  std::ostringstream os;
  os << "completion" << '\0' << req.model << '\0' << req.text << '\0' << json(req.temperature).dump() << '\0'
     << req.max_tokens;
  return sha256_hex(os.str());
}

std::string embedding_cache_key(const std::string& model, const std::string& text) {
  std::string s = "embedding";
  s += '\0';
  s += model;
  s += '\0';
  s += text;
  return sha256_hex(s);
}

Gateway::Gateway(std::shared_ptr<Backend> backend, GatewayConfig cfg, std::shared_ptr<ResponseCache> cache)
    : backend_(std::move(backend)),
      cfg_(std::move(cfg)),
      cache_(std::move(cache)),
      slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(cfg_.concurrency, 1, 1024))) {
  if (!backend_) throw ConfigError("gateway needs a backend");
  if (!cache_) cache_ = std::make_shared<ResponseCache>();
  if (cfg_.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
}

template <typename Fn>
auto Gateway::with_retries(Fn&& fn) -> decltype(fn()) {
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const GatewayError& e) {
      if (attempt >= cfg_.max_attempts) {
        std::lock_guard lock(stats_mu_);
        ++stats_.failures;
        throw;
      }
      const auto wait = cfg_.backoff_base * (1 << (attempt - 1));
      spdlog::warn("gateway attempt {}/{} failed: {}; retrying in {} ms", attempt, cfg_.max_attempts, e.what(),
                   wait.count());
      std::this_thread::sleep_for(wait);
    }
  }
}

CompletionResponse Gateway::complete(const CompletionRequest& req) {
  if (trim(req.text).empty()) throw PreconditionError("completion prompt is empty");
  if (req.model.empty()) throw ConfigError("no chat model configured");
  const auto t0 = Clock::now();
  const std::string key = completion_cache_key(req);

  if (auto rec = cache_->get(key)) {
    CompletionResponse r;
    r.text = rec->at("text").get<std::string>();
    r.usage.prompt_tokens = rec->value("prompt_tokens", 0);
    r.usage.completion_tokens = rec->value("completion_tokens", 0);
    r.cached = true;
    if (rec->contains("latency_seconds") && rec->at("latency_seconds").is_number())
      r.original_latency_seconds = rec->at("latency_seconds").get<double>();
    r.latency_seconds = seconds_since(t0);
    std::lock_guard lock(stats_mu_);
    ++stats_.cached_completions;
    return r;
  }

  CompletionResponse r = with_retries([&] {
    SlotGuard slot(slots_);
    const auto start = Clock::now();
    CompletionResponse out = backend_->complete(req);
    out.latency_seconds = seconds_since(start);
    if (trim(out.text).empty()) throw EmptyResponseError("backend returned empty text");
    return out;
  });
  r.cached = false;
  cache_->put(key, json{{"kind", "completion"},
                        {"model", req.model},
                        {"prompt", std::string(to_string(req.prompt))},
                        {"text", r.text},
                        {"prompt_tokens", r.usage.prompt_tokens},
                        {"completion_tokens", r.usage.completion_tokens},
                        {"latency_seconds", r.latency_seconds}});
  std::lock_guard lock(stats_mu_);
  ++stats_.live_completions;
  stats_.live_latency_seconds += r.latency_seconds;
  return r;
}

CompletionResponse Gateway::complete(PromptName name, const PromptBindings& bindings) {
  CompletionRequest req;
  req.prompt = name;
  req.text = render(prompt(name), bindings);
  req.model = cfg_.chat_model;
  req.temperature = 0.0;
  req.max_tokens = cfg_.max_output_tokens;
  return complete(req);
}

EmbedResult Gateway::embed_timed(const std::vector<std::string>& texts) {
  const auto t0 = Clock::now();
  EmbedResult result;
  result.vectors.resize(texts.size());
  std::vector<std::size_t> missing;
  double cached_original = 0.0;
  bool cached_timing_known = true;

  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (trim(texts[i]).empty()) throw PreconditionError("cannot embed empty text");
    if (auto rec = cache_->get(embedding_cache_key(cfg_.embedding_model, texts[i]))) {
      const auto& v = rec->at("vector");
      Embedding e(static_cast<Eigen::Index>(v.size()));
      for (std::size_t k = 0; k < v.size(); ++k) e[static_cast<Eigen::Index>(k)] = v[k].get<float>();
      result.vectors[i] = std::move(e);
      result.any_cached = true;
      if (rec->contains("latency_seconds") && rec->at("latency_seconds").is_number())
        cached_original += rec->at("latency_seconds").get<double>();
      else
        cached_timing_known = false;
    } else {
      missing.push_back(i);
    }
  }
  result.cached_lookup_seconds = seconds_since(t0);
  if (result.any_cached && cached_timing_known) result.cached_original_latency_seconds = cached_original;

  const std::size_t batch = std::max<std::size_t>(1, cfg_.embed_batch);
  for (std::size_t b = 0; b < missing.size(); b += batch) {
    const std::size_t e = std::min(missing.size(), b + batch);
    std::vector<std::string> chunk;
    for (std::size_t k = b; k < e; ++k) chunk.push_back(texts[missing[k]]);
    double latency = 0.0;
    auto vecs = with_retries([&] {
      SlotGuard slot(slots_);
      const auto start = Clock::now();
      auto out = backend_->embed(chunk, cfg_.embedding_model);
      latency = seconds_since(start);
      if (out.size() != chunk.size()) throw GatewayError("embedding count mismatch");
      return out;
    });
    for (std::size_t k = 0; k < vecs.size(); ++k) {
      json values = json::array();
      for (Eigen::Index d = 0; d < vecs[k].size(); ++d) values.push_back(vecs[k][d]);
      cache_->put(embedding_cache_key(cfg_.embedding_model, chunk[k]),
                  json{{"kind", "embedding"},
                       {"model", cfg_.embedding_model},
                       {"vector", values},
                       {"latency_seconds", latency / static_cast<double>(vecs.size())}});
      result.vectors[missing[b + k]] = std::move(vecs[k]);
    }
    std::lock_guard lock(stats_mu_);
    stats_.live_embeddings += chunk.size();
    stats_.live_latency_seconds += latency;
  }
  {
    std::lock_guard lock(stats_mu_);
    stats_.cached_embeddings += texts.size() - missing.size();
  }

  for (const auto& v : result.vectors) {
    if (v.size() != result.vectors.front().size()) throw Error("internal: embedding dim mismatch within batch");
    if (!v.allFinite()) throw GatewayError("embedding contains non-finite values");
  }
  result.latency_seconds = seconds_since(t0);
  return result;
}

GatewayStats Gateway::stats() const {
  std::lock_guard lock(stats_mu_);
  return stats_;
}

}  // namespace dualtree
