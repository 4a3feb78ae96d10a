#include "dualtree/gateway.hpp"

#include <algorithm>

// After Eigen: <resolv.h> defines a `_res` macro.
#include <httplib.h>

#include "dualtree/errors.hpp"

namespace dualtree {

using nlohmann::json;

HttpBackend::HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
  const auto scheme_end = cfg_.base_url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint URL needs a scheme: " + cfg_.base_url);
  const auto path_start = cfg_.base_url.find('/', scheme_end + 3);
  scheme_host_port_ = cfg_.base_url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : cfg_.base_url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

json HttpBackend::post(const std::string& path, const json& body) {
  httplib::Client cli(scheme_host_port_);
  const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
  cli.set_connection_timeout(secs, 0);
  cli.set_read_timeout(secs, 0);
  cli.set_write_timeout(secs, 0);
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

  auto res = cli.Post(path_prefix_ + path, headers, body.dump(), "application/json");
  if (!res) throw GatewayError("transport failure: " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status >= 500)
    throw GatewayError("HTTP " + std::to_string(res->status) + " from " + path);
  if (res->status != 200)
    throw Error("HTTP " + std::to_string(res->status) + " from " + path + ": " + res->body.substr(0, 512));
  auto j = json::parse(res->body, nullptr, false);
  if (j.is_discarded()) throw GatewayError("malformed JSON from " + path);
  return j;
}

CompletionResponse HttpBackend::complete(const CompletionRequest& req) {
  const json body = {{"model", req.model},
                     {"messages", json::array({{{"role", "user"}, {"content", req.text}}})},
                     {"temperature", req.temperature},
                     {"max_tokens", req.max_tokens}};
  const json j = post("/chat/completions", body);
  CompletionResponse r;
  try {
    const auto& content = j.at("choices").at(0).at("message").at("content");
    r.text = content.is_string() ? content.get<std::string>() : std::string();
    if (j.contains("usage")) {
      r.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
      r.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
    }
  } catch (const json::exception& e) {
    throw GatewayError(std::string("unexpected chat-completions payload: ") + e.what());
  }
  return r;
}

std::vector<Embedding> HttpBackend::embed(const std::vector<std::string>& texts, const std::string& model) {
  const json j = post("/embeddings", json{{"model", model}, {"input", texts}});
  std::vector<Embedding> out(texts.size());
  try {
    const auto& data = j.at("data");
    if (data.size() != texts.size()) throw GatewayError("embedding count mismatch");
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto idx = data[i].value("index", i);
      if (idx >= out.size()) throw GatewayError("embedding index out of range");
      const auto& v = data[i].at("embedding");
      Embedding e(static_cast<Eigen::Index>(v.size()));
      for (std::size_t k = 0; k < v.size(); ++k) e[static_cast<Eigen::Index>(k)] = v[k].get<float>();
      out[idx] = std::move(e);
    }
  } catch (const json::exception& e) {
    throw GatewayError(std::string("unexpected embeddings payload: ") + e.what());
  }
  return out;
}

}  // namespace dualtree
