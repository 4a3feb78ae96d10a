#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "dualtree/aggregation.hpp"
#include "dualtree/coverage.hpp"
#include "dualtree/evaluation.hpp"
#include "dualtree/gateway.hpp"
#include "dualtree/pool.hpp"
#include "dualtree/tree.hpp"

namespace dualtree {

namespace fs = std::filesystem;

struct RunConfig {
  fs::path corpus;
  fs::path qa;
  fs::path clusters;  // question-cluster file for coverage
  fs::path index_dir = "index";
  std::optional<fs::path> cache_dir;  // <index_dir>/cache when empty
  std::optional<fs::path> out;

  std::string backend = "mock";  // mock | live
  HttpBackendConfig http;
  GatewayConfig gateway;

  std::uint64_t seed = 0;
  std::size_t chunk_tokens = kDefaultMaxChunkTokens;
  int max_levels = 4;
  double threshold = 0.1;
  std::optional<long> reduced_dim;
  std::optional<long> k_max;
  std::size_t summary_token_budget = 512;
  std::size_t aggregate_token_budget = 2048;
  std::size_t workers = 4;

  std::string pool_flags = "default";
  std::string retriever = "dense";
  std::size_t top_k = 20;

  ClusteringParams clustering() const;
  TreeConfig tree_config() const;
  PoolConfig pool_config() const;
  nlohmann::ordered_json to_json() const;
};

std::unique_ptr<Gateway> make_gateway(const RunConfig& cfg, const std::optional<fs::path>& cache_dir);

// A built index loaded back from disk.
struct LoadedIndex {
  IndexTree sim;
  IndexTree rel;
  std::vector<Proposition> propositions;
  std::vector<Embedding> proposition_embeddings;
  nlohmann::json manifest;
};

LoadedIndex load_index(const fs::path& dir);
RetrievalPool pool_from_index(const LoadedIndex& index, const PoolConfig& cfg);

// Chunk -> extract -> aggregate -> both trees -> flatten. Writes every artifact
// plus manifest.json under cfg.index_dir and returns the manifest. Stage
// failures surface as StageError.
nlohmann::ordered_json cmd_build(const RunConfig& cfg);

// Hash over the manifest minus timings plus the artifact bytes.
std::string index_content_hash(const fs::path& dir, const nlohmann::ordered_json& manifest);

nlohmann::ordered_json cmd_query(const RunConfig& cfg, const std::string& query);
nlohmann::ordered_json cmd_evaluate(const RunConfig& cfg, const std::string& label = "");
nlohmann::ordered_json cmd_coverage(const RunConfig& cfg);
nlohmann::ordered_json cmd_compare(const fs::path& report_a, const fs::path& report_b);
// Extraction statistics: chunks, propositions, entities, aggregates and
// propositions per entity.
nlohmann::ordered_json cmd_stats(const fs::path& index_dir);

}  // namespace dualtree
