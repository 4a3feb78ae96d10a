#include "dualtree/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "dualtree/errors.hpp"
#include "dualtree/extraction.hpp"
#include "dualtree/index_io.hpp"
#include "dualtree/prompts.hpp"
#include "dualtree/text.hpp"

namespace dualtree {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

constexpr const char* kArtifacts[] = {"entities.jsonl", "propositions.jsonl", "propositions.bin", "aggregates.jsonl",
                                      "nodes.jsonl",    "edges.jsonl",        "embeddings.bin",   "pool.jsonl"};

// Choices the build makes where the method description leaves room.
const std::vector<std::string> kDeviations = {
    "singleton clusters are carried up as promoted copies without a summary call and are left out of the pool",
    "aggregate members are ordered by (doc_id, seq_in_doc); doc_id order stands in for corpus order",
    "proposition entity keys come from triplet heads and tails only",
    "aggregates above the token budget are split into numbered parts",
    "structured-output parse failures degrade the chunk instead of re-asking the model",
};

template <typename Fn>
auto stage(const char* name, ordered_json& durations, Fn&& fn) -> decltype(fn()) {
  const auto t0 = Clock::now();
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      durations[name] = std::chrono::duration<double>(Clock::now() - t0).count();
    } else {
      auto r = fn();
      durations[name] = std::chrono::duration<double>(Clock::now() - t0).count();
      return r;
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& p, const ordered_json& j) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

void require_file(const fs::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string(what) + " path is not set");
  if (!fs::is_regular_file(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}

std::optional<fs::path> cache_for(const RunConfig& cfg) {
  if (cfg.cache_dir) return cfg.cache_dir;
  return cfg.index_dir / "cache";
}

ordered_json hit_json(const RetrievalPool& pool, const Hit& h, std::size_t rank) {
  const auto& e = pool.entry(h.index);
  return ordered_json{{"rank", rank},       {"entry_id", e.entry_id}, {"origin", to_string(e.origin)},
                      {"score", h.score},   {"node_id", e.node_id},   {"provenance", e.provenance},
                      {"text", e.text}};
}

}  // namespace

ClusteringParams RunConfig::clustering() const {
  ClusteringParams p;
  p.threshold = threshold;
  if (reduced_dim) p.reduced_dim = static_cast<Eigen::Index>(*reduced_dim);
  if (k_max) p.k_max = static_cast<Eigen::Index>(*k_max);
  p.seed = seed;
  return p;
}

TreeConfig RunConfig::tree_config() const {
  TreeConfig t;
  t.max_levels = max_levels;
  t.clustering = clustering();
  t.summary_token_budget = summary_token_budget;
  t.workers = workers;
  return t;
}

PoolConfig RunConfig::pool_config() const {
  PoolConfig p;
  p.include = parse_pool_flags(pool_flags);
  p.retriever = retriever_from_string(retriever);
  if (top_k < 1) throw ConfigError("top_k must be >= 1");
  p.top_k = top_k;
  return p;
}

ordered_json RunConfig::to_json() const {
  auto opt = [](const auto& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  return ordered_json{{"corpus", corpus.string()},
                      {"backend", backend},
                      {"chat_model", gateway.chat_model},
                      {"embedding_model", gateway.embedding_model},
                      {"endpoint", backend == "live" ? http.base_url : ""},
                      {"seed", seed},
                      {"chunk_tokens", chunk_tokens},
                      {"max_levels", max_levels},
                      {"threshold", threshold},
                      {"reduced_dim", opt(reduced_dim)},
                      {"k_max", opt(k_max)},
                      {"summary_token_budget", summary_token_budget},
                      {"aggregate_token_budget", aggregate_token_budget},
                      {"pool_flags", pool_config().flags_string()},
                      {"retriever", retriever},
                      {"top_k", top_k}};
}

std::unique_ptr<Gateway> make_gateway(const RunConfig& cfg, const std::optional<fs::path>& cache_dir) {
  std::shared_ptr<Backend> backend;
  if (cfg.backend == "mock") {
    backend = std::make_shared<MockBackend>();
  } else if (cfg.backend == "live") {
    if (cfg.http.api_key.empty()) throw ConfigError("live backend needs an API key (DUALTREE_API_KEY)");
    backend = std::make_shared<HttpBackend>(cfg.http);
  } else {
    throw ConfigError("unknown backend '" + cfg.backend + "' (expected live or mock)");
  }
  auto gcfg = cfg.gateway;
  gcfg.concurrency = std::max<std::size_t>(1, gcfg.concurrency);
  return std::make_unique<Gateway>(backend, gcfg, std::make_shared<ResponseCache>(cache_dir));
}

LoadedIndex load_index(const fs::path& dir) {
  if (!fs::is_regular_file(dir / "manifest.json")) throw ConfigError("no index at " + dir.string());
  LoadedIndex idx;
  try {
    idx.manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw ParseError("manifest.json: " + std::string(e.what()));
  }
  std::tie(idx.sim, idx.rel) = load_trees(dir);
  idx.propositions = load_propositions(dir / "propositions.jsonl");
  idx.proposition_embeddings = read_embeddings(dir / "propositions.bin");
  if (idx.proposition_embeddings.size() != idx.propositions.size())
    throw ParseError("propositions.bin does not match propositions.jsonl");
  return idx;
}

RetrievalPool pool_from_index(const LoadedIndex& index, const PoolConfig& cfg) {
  return flatten(index.sim, index.rel, index.propositions, index.proposition_embeddings, cfg);
}

std::string index_content_hash(const fs::path& dir, const ordered_json& manifest) {
  ordered_json m = manifest;
  m.erase("durations");
  m.erase("content_hash");
  std::string all = m.dump();
  for (const char* name : kArtifacts) {
    all += '\0';
    all += name;
    all += '\0';
    all += sha256_hex(read_file(dir / name));
  }
  return sha256_hex(all);
}

ordered_json cmd_build(const RunConfig& cfg) {
  // Validate everything before touching the index directory.
  require_file(cfg.corpus, "corpus");
  const PoolConfig pool_cfg = cfg.pool_config();
  if (cfg.max_levels < 1) throw ConfigError("max_levels must be >= 1");
  if (cfg.threshold <= 0.0 || cfg.threshold >= 1.0) throw ConfigError("threshold must lie in (0, 1)");
  const auto docs = load_corpus(cfg.corpus);
  if (docs.empty()) throw ValidationError("corpus is empty");

  fs::create_directories(cfg.index_dir);
  auto gw = make_gateway(cfg, cache_for(cfg));
  ordered_json durations = ordered_json::object();

  const auto chunks = stage("chunk", durations, [&] { return chunk_corpus(docs, cfg.chunk_tokens); });

  const auto extraction = stage("extract", durations, [&] {
    const auto previous = load_extraction(cfg.index_dir);
    ExtractionOptions opts;
    opts.workers = cfg.workers;
    auto r = extract_corpus(*gw, chunks, opts, previous.empty() ? nullptr : &previous);
    save_extraction(cfg.index_dir, r);
    return r;
  });

  const auto aggregates = stage("aggregate", durations, [&] {
    AggregationOptions opts;
    opts.token_budget = cfg.aggregate_token_budget;
    auto aggs = build_aggregates(filter_entityless(extraction.propositions), opts);
    save_aggregates(cfg.index_dir / "aggregates.jsonl", aggs);
    return aggs;
  });

  const auto tcfg = cfg.tree_config();
  auto sim = stage("similarity_tree", durations, [&] {
    std::vector<LeafInput> leaves;
    for (const auto& c : chunks) leaves.push_back({c.text, c.chunk_id});
    return build_tree(*gw, leaves, TreeTag::similarity, tcfg);
  });
  auto rel = stage("relatedness_tree", durations, [&] {
    if (aggregates.empty()) throw PreconditionError("no proposition aggregates; the relatedness tree has no leaves");
    std::vector<LeafInput> leaves;
    for (const auto& a : aggregates) leaves.push_back({a.text, a.agg_id});
    return build_tree(*gw, leaves, TreeTag::relatedness, tcfg);
  });

  const auto pool = stage("flatten", durations, [&] {
    save_trees(cfg.index_dir, sim, rel);
    std::vector<std::string> texts;
    for (const auto& p : extraction.propositions) texts.push_back(p.text);
    std::vector<Embedding> prop_vecs;
    if (!texts.empty()) prop_vecs = gw->embed(texts);
    write_embeddings(cfg.index_dir / "propositions.bin", prop_vecs);
    auto pool = flatten(sim, rel, extraction.propositions, prop_vecs, pool_cfg);
    pool.save(cfg.index_dir / "pool.jsonl");
    return pool;
  });

  for (const auto* t : {&sim, &rel}) {
    const auto problems = check_tree(*t, cfg.max_levels);
    if (!problems.empty()) throw StageError("check", std::string(to_string(t->tag)) + " tree: " + problems.front());
  }

  auto level_seeds = [&](const IndexTree& t) {
    ordered_json s = ordered_json::array();
    for (int l = 0; l < t.max_level(); ++l) s.push_back(cfg.seed + static_cast<std::uint64_t>(l));
    return s;
  };
  auto tree_counts = [](const IndexTree& t) {
    std::size_t promoted = 0, fallback = 0;
    for (const auto& n : t.nodes) {
      promoted += n.promoted;
      fallback += n.fallback;
    }
    return ordered_json{{"nodes", t.nodes.size()},     {"levels", t.levels.size()},   {"edges", t.edge_count()},
                        {"leaves", t.levels.front().size()}, {"promoted", promoted}, {"fallback_summaries", fallback}};
  };
  const auto stats = aggregate_stats(aggregates);
  ordered_json degradations = ordered_json::array();
  for (const auto& d : extraction.degradations)
    degradations.push_back({{"chunk_id", d.chunk_id}, {"stage", d.stage}, {"message", d.message}});

  ordered_json manifest{
      {"format", 1},
      {"config", cfg.to_json()},
      {"seeds", {{"base", cfg.seed}, {"similarity_levels", level_seeds(sim)}, {"relatedness_levels", level_seeds(rel)}}},
      {"prompt_version", prompt_registry_version()},
      {"deviations", kDeviations},
      {"counts",
       {{"documents", docs.size()},
        {"chunks", chunks.size()},
        {"propositions", extraction.propositions.size()},
        {"entities", extraction.distinct_entities()},
        {"aggregates", stats.aggregates},
        {"aggregate_entities", stats.entities},
        {"similarity_tree", tree_counts(sim)},
        {"relatedness_tree", tree_counts(rel)},
        {"pool_size", pool.size()}}},
      {"pool_hash", pool.manifest_hash()},
      {"degradations", degradations},
      {"durations", durations}};
  manifest["content_hash"] = index_content_hash(cfg.index_dir, manifest);
  write_json(cfg.index_dir / "manifest.json", manifest);
  spdlog::info("built index at {}: {} pool entries", cfg.index_dir.string(), pool.size());
  return manifest;
}

ordered_json cmd_query(const RunConfig& cfg, const std::string& query) {
  if (trim(query).empty()) throw ConfigError("query is empty");
  const auto pcfg = cfg.pool_config();
  const auto index = load_index(cfg.index_dir);
  const auto pool = pool_from_index(index, pcfg);
  auto gw = make_gateway(cfg, cache_for(cfg));
  const auto hits = pool.retrieve(*gw, query, pcfg);
  ordered_json out{{"query", query},
                   {"retriever", to_string(pcfg.retriever)},
                   {"top_k", pcfg.top_k},
                   {"pool_flags", pcfg.flags_string()},
                   {"pool_size", pool.size()},
                   {"hits", ordered_json::array()}};
  for (std::size_t i = 0; i < hits.size(); ++i) out["hits"].push_back(hit_json(pool, hits[i], i + 1));
  if (cfg.out) write_json(*cfg.out, out);
  return out;
}

ordered_json cmd_evaluate(const RunConfig& cfg, const std::string& label) {
  require_file(cfg.qa, "QA file");
  const auto pcfg = cfg.pool_config();
  const auto items = load_qa(cfg.qa);
  const auto index = load_index(cfg.index_dir);
  const auto pool = pool_from_index(index, pcfg);
  auto gw = make_gateway(cfg, cache_for(cfg));
  auto report = evaluate(*gw, pool, items, pcfg);
  report.label = label.empty() ? pcfg.flags_string() : label;
  const auto path = cfg.out.value_or(cfg.index_dir / "report.json");
  save_report(path, report);
  ordered_json out = report.to_json();
  out["report_path"] = path.string();
  return out;
}

ordered_json cmd_coverage(const RunConfig& cfg) {
  require_file(cfg.corpus, "corpus");
  require_file(cfg.clusters, "question-cluster file");
  const auto docs = load_corpus(cfg.corpus);
  const auto qcs = load_question_clusters(cfg.clusters);
  auto gw = make_gateway(cfg, cfg.cache_dir);
  const auto report = run_coverage(*gw, docs, qcs, cfg.clustering(), cfg.workers);
  ordered_json out = report.to_json();
  const auto path = cfg.out.value_or("coverage.json");
  write_json(path, out);
  out["report_path"] = path.string();
  return out;
}

ordered_json cmd_compare(const fs::path& report_a, const fs::path& report_b) {
  require_file(report_a, "report A");
  require_file(report_b, "report B");
  const auto c = compute_tper(load_report(report_a), load_report(report_b));
  return c.to_json();
}

ordered_json cmd_stats(const fs::path& index_dir) {
  require_file(index_dir / "entities.jsonl", "entities.jsonl");
  const auto chunks = load_extraction(index_dir);
  const auto props = load_propositions(index_dir / "propositions.jsonl");
  const auto aggs = load_aggregates(index_dir / "aggregates.jsonl");
  std::set<std::string> entities;
  for (const auto& [id, c] : chunks)
    for (const auto& e : c.entities) entities.insert(e.entity_key);
  const auto s = aggregate_stats(aggs);
  return ordered_json{{"chunks", chunks.size()},
                      {"propositions", props.size()},
                      {"entities", entities.size()},
                      {"aggregates", s.aggregates},
                      {"avg_props_per_entity", s.avg_props_per_entity},
                      {"max_props_per_entity", s.max_props_per_entity},
                      {"min_props_per_entity", s.min_props_per_entity}};
}

}  // namespace dualtree
