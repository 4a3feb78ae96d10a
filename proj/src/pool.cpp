#include "dualtree/pool.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

#include "dualtree/errors.hpp"
#include "dualtree/text.hpp"

namespace dualtree {
namespace {

using nlohmann::json;

constexpr std::array<std::string_view, kOriginCount> kOriginNames = {
    "sim_chunk", "sim_summary", "rel_aggregate", "rel_summary", "raw_proposition"};

Origin origin_of(const TreeNode& n) {
  if (n.tree == TreeTag::similarity) return n.level == 0 ? Origin::sim_chunk : Origin::sim_summary;
  return n.level == 0 ? Origin::rel_aggregate : Origin::rel_summary;
}

}  // namespace

std::string_view to_string(Origin o) {
  return kOriginNames[static_cast<std::size_t>(o)];
}

Origin origin_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kOriginCount; ++i)
    if (kOriginNames[i] == s) return static_cast<Origin>(i);
  throw ConfigError("unknown pool origin '" + std::string(s) + "'");
}

std::string_view to_string(Retriever r) {
  return r == Retriever::dense ? "dense" : "bm25";
}

Retriever retriever_from_string(std::string_view s) {
  if (s == "dense") return Retriever::dense;
  if (s == "bm25") return Retriever::bm25;
  throw ConfigError("unknown retriever '" + std::string(s) + "'");
}

std::string PoolConfig::flags_string() const {
  std::string out;
  for (std::size_t i = 0; i < kOriginCount; ++i) {
    if (!include[i]) continue;
    if (!out.empty()) out += ',';
    out += kOriginNames[i];
  }
  return out;
}

std::array<bool, kOriginCount> parse_pool_flags(std::string_view text) {
  using O = Origin;
  auto set = [](std::initializer_list<O> on) {
    std::array<bool, kOriginCount> f{};
    for (auto o : on) f[static_cast<std::size_t>(o)] = true;
    return f;
  };
  const std::string s = trim(text);
  if (s.empty() || s == "default") return set({O::sim_chunk, O::sim_summary, O::rel_aggregate, O::rel_summary});
  if (s == "A") return set({O::sim_chunk, O::sim_summary, O::rel_aggregate});
  if (s == "B")
    return set({O::sim_chunk, O::sim_summary, O::rel_aggregate, O::rel_summary, O::raw_proposition});
  if (s == "C") return set({O::sim_chunk, O::sim_summary, O::rel_summary, O::raw_proposition});
  if (s == "D") return set({O::sim_chunk, O::sim_summary, O::raw_proposition});
  if (s == "sim_only") return set({O::sim_chunk, O::sim_summary});

  std::array<bool, kOriginCount> f{};
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto comma = s.find(',', pos);
    const auto name = trim(std::string_view(s).substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
    if (!name.empty()) f[static_cast<std::size_t>(origin_from_string(name))] = true;
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (std::none_of(f.begin(), f.end(), [](bool b) { return b; }))
    throw ConfigError("pool flags enable no origin: '" + s + "'");
  return f;
}

Bm25Index::Bm25Index(const std::vector<std::string>& docs, Bm25Params params) : params_(params) {
  doc_len_.resize(docs.size());
  double total = 0.0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto toks = word_tokens(docs[d]);
    doc_len_[d] = static_cast<double>(toks.size());
    total += doc_len_[d];
    std::unordered_map<std::string, double> tf;
    for (const auto& t : toks) tf[t] += 1.0;
    for (auto& [term, count] : tf) postings_[term].emplace_back(d, count);
  }
  avg_len_ = docs.empty() ? 0.0 : total / static_cast<double>(docs.size());
}

std::vector<double> Bm25Index::score(std::string_view query) const {
  std::vector<double> scores(doc_len_.size(), 0.0);
  if (doc_len_.empty() || avg_len_ <= 0.0) return scores;
  const double n = static_cast<double>(doc_len_.size());
  std::unordered_set<std::string> seen;
  for (const auto& term : word_tokens(query)) {
    if (!seen.insert(term).second) continue;
    const auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const double df = static_cast<double>(it->second.size());
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    for (const auto& [doc, tf] : it->second) {
      const double norm = params_.k1 * (1.0 - params_.b + params_.b * doc_len_[doc] / avg_len_);
      scores[doc] += idf * tf * (params_.k1 + 1.0) / (tf + norm);
    }
  }
  return scores;
}

RetrievalPool::RetrievalPool(std::vector<PoolEntry> entries, const std::vector<Embedding>& embeddings)
    : entries_(std::move(entries)) {
  if (entries_.size() != embeddings.size()) throw Error("pool: entry/embedding count mismatch");
  if (entries_.empty()) throw ConfigError("retrieval pool is empty");
  const auto dim = embeddings.front().size();
  rows_.resize(static_cast<Eigen::Index>(entries_.size()), dim);
  norms_.resize(entries_.size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].size() != dim) throw Error("pool: embedding dims differ");
    rows_.row(static_cast<Eigen::Index>(i)) = embeddings[i].transpose();
    norms_[i] = embeddings[i].cast<double>().norm();
  }
  std::vector<std::string> texts;
  texts.reserve(entries_.size());
  for (const auto& e : entries_) texts.push_back(e.text);
  bm25_ = Bm25Index(texts);
}

std::vector<Hit> RetrievalPool::top_k_of(const std::vector<double>& scores, std::size_t top_k) const {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t k = std::min(top_k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return entries_[a].entry_id < entries_[b].entry_id;
                    });
  std::vector<Hit> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back({idx[i], scores[idx[i]]});
  return out;
}

std::vector<Hit> RetrievalPool::retrieve_dense(const Embedding& query, std::size_t top_k) const {
  if (query.size() != rows_.cols()) throw RetrievalError("query embedding dim does not match the pool");
  const Eigen::VectorXd q = query.cast<double>();
  const double qn = q.norm();
  std::vector<double> scores(entries_.size(), 0.0);
  if (qn > 0.0) {
    for (Eigen::Index i = 0; i < rows_.rows(); ++i) {
      const double n = norms_[static_cast<std::size_t>(i)];
      if (n > 0.0) scores[static_cast<std::size_t>(i)] = rows_.row(i).cast<double>().dot(q) / (n * qn);
    }
  }
  return top_k_of(scores, top_k);
}

std::vector<Hit> RetrievalPool::retrieve_dense(Gateway& gw, const std::string& query, std::size_t top_k) const {
  std::vector<Embedding> q;
  try {
    q = gw.embed({query});
  } catch (const GatewayError& e) {
    throw RetrievalError(std::string("query embedding failed: ") + e.what());
  }
  return retrieve_dense(q.front(), top_k);
}

std::vector<Hit> RetrievalPool::retrieve_bm25(const std::string& query, std::size_t top_k) const {
  return top_k_of(bm25_.score(query), top_k);
}

std::vector<Hit> RetrievalPool::retrieve(Gateway& gw, const std::string& query, const PoolConfig& cfg) const {
  if (cfg.top_k < 1) throw ConfigError("top_k must be >= 1");
  return cfg.retriever == Retriever::dense ? retrieve_dense(gw, query, cfg.top_k) : retrieve_bm25(query, cfg.top_k);
}

void RetrievalPool::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  for (const auto& e : entries_)
    out << json{{"entry_id", e.entry_id},
                {"origin", to_string(e.origin)},
                {"node_id", e.node_id},
                {"provenance", e.provenance},
                {"text", e.text}}
               .dump()
        << '\n';
}

std::string RetrievalPool::manifest_hash() const {
  std::string all;
  for (const auto& e : entries_) {
    all += e.entry_id;
    all += '\0';
    all += to_string(e.origin);
    all += '\0';
    all += e.text;
    all += '\n';
  }
  return sha256_hex(all);
}

RetrievalPool flatten(const IndexTree& sim, const IndexTree& rel, const std::vector<Proposition>& props,
                      const std::vector<Embedding>& prop_embeddings, const PoolConfig& cfg) {
  if (std::none_of(cfg.include.begin(), cfg.include.end(), [](bool b) { return b; }))
    throw ConfigError("pool configuration enables no origin");
  std::vector<PoolEntry> entries;
  std::vector<Embedding> embeddings;
  std::unordered_set<std::string> ids;
  for (const IndexTree* t : {&sim, &rel}) {
    for (const auto& n : t->nodes) {
      const Origin o = origin_of(n);
      if (!cfg.includes(o) || n.promoted) continue;
      if (!ids.insert(n.node_id).second) continue;
      entries.push_back({n.node_id, o, n.text, n.node_id, n.level == 0 ? n.provenance : std::string()});
      embeddings.push_back(n.embedding);
    }
  }
  if (cfg.includes(Origin::raw_proposition)) {
    if (prop_embeddings.size() != props.size())
      throw ConfigError("raw_proposition origin needs one embedding per proposition");
    for (std::size_t i = 0; i < props.size(); ++i) {
      const auto id = "prop:" + props[i].prop_id;
      if (!ids.insert(id).second) continue;
      entries.push_back({id, Origin::raw_proposition, props[i].text, props[i].prop_id, props[i].chunk_id});
      embeddings.push_back(prop_embeddings[i]);
    }
  }
  if (entries.empty()) throw ConfigError("retrieval pool is empty under flags '" + cfg.flags_string() + "'");
  return RetrievalPool(std::move(entries), embeddings);
}

}  // namespace dualtree
