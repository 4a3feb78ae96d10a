#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dualtree/corpus.hpp"
#include "dualtree/gateway.hpp"
#include "dualtree/structured.hpp"

namespace dualtree {

struct Entity {
  std::string canonical_name;
  std::string entity_type;
  std::string entity_key;  // normalize_key(canonical_name)
};

Entity make_entity(std::string name, std::string type);

struct Proposition {
  std::string prop_id;
  std::string chunk_id;
  std::string doc_id;
  std::size_t seq_in_doc = 0;
  std::string text;
  std::vector<std::string> entity_keys;
};

// A per-item fallback taken instead of aborting the build.
struct Degradation {
  std::string chunk_id;
  std::string stage;  // rewrite | entities | propositions
  std::string message;
};

struct RewriteResult {
  std::string text;
  bool degraded = false;
  std::string message;
};

// Coreference rewrite against the previous chunk of the same document. Falls
// back to the original text when the gateway gives up.
RewriteResult rewrite_chunk(Gateway& gw, const Chunk& chunk, const Chunk* prev);

struct EntityResult {
  std::vector<Entity> entities;
  bool degraded = false;
  std::string message;
};

EntityResult extract_entities(Gateway& gw, std::string_view rewritten);
// {"n1": {"name": ..., "type": ...}, ...} -> entities, merged by key, response order.
std::vector<Entity> parse_entities(const ordered_json& j);

struct PropositionResult {
  std::vector<Proposition> propositions;  // seq_in_doc left at 0
  std::vector<Entity> triplet_only_entities;
  bool degraded = false;
  std::string message;
};

PropositionResult extract_propositions(Gateway& gw, std::string_view rewritten, const std::vector<Entity>& entities,
                                       const Chunk& source);
// One proposition per fact record. Entity keys come from triplet heads and
// tails: names matching a provided entity resolve to it, the rest are added
// as triplet-only entities.
PropositionResult parse_propositions(const ordered_json& j, const std::vector<Entity>& entities, const Chunk& source);

std::vector<Proposition> filter_entityless(std::vector<Proposition> props);

struct ChunkExtraction {
  std::string chunk_id;
  std::string doc_id;
  std::size_t seq = 0;
  std::string text_hash;
  std::string rewritten;
  std::vector<Entity> entities;  // includes triplet-only entities
  std::vector<Proposition> propositions;
  std::vector<Degradation> degradations;
};

struct ExtractionResult {
  std::vector<ChunkExtraction> chunks;   // input chunk order
  std::vector<Proposition> propositions;  // all, document order, seq_in_doc assigned
  std::vector<Degradation> degradations;
  std::size_t reused_chunks = 0;

  std::size_t distinct_entities() const;
};

struct ExtractionOptions {
  std::size_t workers = 4;
};

// Runs rewrite -> entities -> propositions per chunk. `reuse` entries whose
// text hash still matches skip the model calls.
ExtractionResult extract_corpus(Gateway& gw, const std::vector<Chunk>& chunks, const ExtractionOptions& opts = {},
                                const std::map<std::string, ChunkExtraction>* reuse = nullptr);

// entities.jsonl (one record per chunk) and propositions.jsonl.
void save_extraction(const std::filesystem::path& dir, const ExtractionResult& result);
std::map<std::string, ChunkExtraction> load_extraction(const std::filesystem::path& dir);
std::vector<Proposition> load_propositions(const std::filesystem::path& file);

}  // namespace dualtree
