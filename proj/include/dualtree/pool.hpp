#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "dualtree/extraction.hpp"
#include "dualtree/gateway.hpp"
#include "dualtree/tree.hpp"

namespace dualtree {

enum class Origin { sim_chunk, sim_summary, rel_aggregate, rel_summary, raw_proposition };
inline constexpr std::size_t kOriginCount = 5;

std::string_view to_string(Origin o);
Origin origin_from_string(std::string_view s);

enum class Retriever { dense, bm25 };
std::string_view to_string(Retriever r);
Retriever retriever_from_string(std::string_view s);

struct PoolEntry {
  std::string entry_id;
  Origin origin = Origin::sim_chunk;
  std::string text;
  std::string node_id;     // tree node, or proposition id for raw propositions
  std::string provenance;  // chunk_id / agg_id for leaves, empty for summaries
};

struct PoolConfig {
  std::array<bool, kOriginCount> include{true, true, true, true, false};
  Retriever retriever = Retriever::dense;
  std::size_t top_k = 20;

  bool includes(Origin o) const { return include[static_cast<std::size_t>(o)]; }
  std::string flags_string() const;
};

// Accepts a preset (default, A, B, C, D, sim_only) or a comma list of origins.
//   A: default minus relatedness summaries
//   B: default plus raw propositions
//   C: B minus aggregates
//   D: C minus relatedness summaries
std::array<bool, kOriginCount> parse_pool_flags(std::string_view text);

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

// Okapi BM25 over the pool's word tokens, idf = ln(1 + (N - df + 0.5) / (df + 0.5)).
class Bm25Index {
 public:
  Bm25Index() = default;
  Bm25Index(const std::vector<std::string>& docs, Bm25Params params = {});
  // One score per document; each distinct query term counts once.
  std::vector<double> score(std::string_view query) const;
  std::size_t size() const { return doc_len_.size(); }

 private:
  Bm25Params params_;
  std::vector<double> doc_len_;
  double avg_len_ = 0.0;
  std::unordered_map<std::string, std::vector<std::pair<std::size_t, double>>> postings_;  // term -> (doc, tf)
};

struct Hit {
  std::size_t index = 0;  // into RetrievalPool::entries()
  double score = 0.0;
};

// Immutable flattened candidate list from both trees. Dense retrieval is an
// exact cosine scan; ties break by entry_id ascending.
class RetrievalPool {
 public:
  RetrievalPool(std::vector<PoolEntry> entries, const std::vector<Embedding>& embeddings);

  const std::vector<PoolEntry>& entries() const { return entries_; }
  const PoolEntry& entry(std::size_t i) const { return entries_.at(i); }
  std::size_t size() const { return entries_.size(); }
  Eigen::Index dim() const { return rows_.cols(); }

  std::vector<Hit> retrieve_dense(const Embedding& query, std::size_t top_k) const;
  std::vector<Hit> retrieve_dense(Gateway& gw, const std::string& query, std::size_t top_k) const;
  std::vector<Hit> retrieve_bm25(const std::string& query, std::size_t top_k) const;
  std::vector<Hit> retrieve(Gateway& gw, const std::string& query, const PoolConfig& cfg) const;

  // JSON Lines listing (entry_id, origin, node_id, provenance, text).
  void save(const std::filesystem::path& file) const;
  std::string manifest_hash() const;

 private:
  std::vector<Hit> top_k_of(const std::vector<double>& scores, std::size_t top_k) const;

  std::vector<PoolEntry> entries_;
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows_;
  std::vector<double> norms_;  // cosine is taken in double against these
  Bm25Index bm25_;
};

// Flattens the enabled origins. Promoted singleton nodes repeat their child's
// text and are skipped. Throws ConfigError on an empty pool or when raw
// propositions are enabled without embeddings for them.
RetrievalPool flatten(const IndexTree& sim, const IndexTree& rel, const std::vector<Proposition>& props,
                      const std::vector<Embedding>& prop_embeddings, const PoolConfig& cfg);

}  // namespace dualtree
