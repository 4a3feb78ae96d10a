#include "dualtree/extraction.hpp"

#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "dualtree/errors.hpp"
#include "dualtree/parallel.hpp"
#include "dualtree/text.hpp"

namespace dualtree {
namespace {

using nlohmann::json;

std::string join_names(const std::vector<Entity>& entities) {
  std::string out;
  for (const auto& e : entities) {
    if (!out.empty()) out += ", ";
    out += e.canonical_name;
  }
  return out;
}

json entity_to_json(const Entity& e) {
  return {{"name", e.canonical_name}, {"type", e.entity_type}, {"key", e.entity_key}};
}

json proposition_to_json(const Proposition& p) {
  return {{"prop_id", p.prop_id}, {"chunk_id", p.chunk_id}, {"doc_id", p.doc_id}, {"seq_in_doc", p.seq_in_doc},
          {"text", p.text},       {"entity_keys", p.entity_keys}};
}

Proposition proposition_from_json(const json& j) {
  Proposition p;
  p.prop_id = j.at("prop_id").get<std::string>();
  p.chunk_id = j.at("chunk_id").get<std::string>();
  p.doc_id = j.at("doc_id").get<std::string>();
  p.seq_in_doc = j.at("seq_in_doc").get<std::size_t>();
  p.text = j.at("text").get<std::string>();
  p.entity_keys = j.at("entity_keys").get<std::vector<std::string>>();
  return p;
}

}  // namespace

Entity make_entity(std::string name, std::string type) {
  Entity e;
  e.canonical_name = trim(name);
  e.entity_type = std::move(type);
  e.entity_key = normalize_key(e.canonical_name);
  return e;
}

RewriteResult rewrite_chunk(Gateway& gw, const Chunk& chunk, const Chunk* prev) {
  if (trim(chunk.text).empty()) throw PreconditionError("rewrite_chunk: chunk text is empty");
  try {
    auto r = gw.complete(PromptName::rewrite,
                         {{"previous_paragraph", prev ? prev->text : std::string()}, {"paragraph", chunk.text}});
    return {trim(r.text), false, {}};
  } catch (const GatewayError& e) {
    spdlog::warn("rewrite degraded to identity for {}: {}", chunk.chunk_id, e.what());
    return {chunk.text, true, e.what()};
  }
}

std::vector<Entity> parse_entities(const ordered_json& j) {
  std::vector<Entity> out;
  std::unordered_set<std::string> seen;
  auto take = [&](const ordered_json& rec) {
    if (!rec.is_object() || !rec.contains("name") || !rec.at("name").is_string()) return;
    auto e = make_entity(rec.at("name").get<std::string>(),
                         rec.contains("type") && rec.at("type").is_string() ? rec.at("type").get<std::string>() : "");
    if (e.entity_key.empty() || !seen.insert(e.entity_key).second) return;
    out.push_back(std::move(e));
  };
  if (j.is_array()) {
    for (const auto& rec : j) take(rec);
  } else if (j.is_object()) {
    for (const auto& [key, rec] : j.items()) take(rec);
  }
  return out;
}

EntityResult extract_entities(Gateway& gw, std::string_view rewritten) {
  if (trim(rewritten).empty()) throw PreconditionError("extract_entities: text is empty");
  try {
    auto r = gw.complete(PromptName::entity_extract, {{"paragraph", std::string(rewritten)}});
    return {parse_entities(parse_structured(r.text)), false, {}};
  } catch (const StructuredParseError& e) {
    return {{}, true, e.what()};
  } catch (const GatewayError& e) {
    return {{}, true, e.what()};
  }
}

PropositionResult parse_propositions(const ordered_json& j, const std::vector<Entity>& entities,
                                     const Chunk& source) {
  PropositionResult out;
  std::unordered_map<std::string, const Entity*> by_key;
  for (const auto& e : entities) by_key.emplace(e.entity_key, &e);
  std::unordered_set<std::string> triplet_only;

  auto resolve = [&](const ordered_json& name, std::vector<std::string>& keys) {
    if (!name.is_string()) return;
    auto e = make_entity(name.get<std::string>(), "");
    if (e.entity_key.empty()) return;
    if (std::find(keys.begin(), keys.end(), e.entity_key) != keys.end()) return;
    keys.push_back(e.entity_key);
    if (by_key.count(e.entity_key) == 0 && triplet_only.insert(e.entity_key).second)
      out.triplet_only_entities.push_back(std::move(e));
  };

  if (!j.is_object()) return out;
  std::size_t local = 0;
  for (const auto& [key, rec] : j.items()) {
    if (!rec.is_object() || !rec.contains("fact") || !rec.at("fact").is_string()) continue;
    Proposition p;
    p.text = trim(rec.at("fact").get<std::string>());
    if (p.text.empty()) continue;
    p.chunk_id = source.chunk_id;
    p.doc_id = source.doc_id;
    p.prop_id = source.chunk_id + ":p" + std::to_string(local++);
    if (rec.contains("triplets") && rec.at("triplets").is_array()) {
      for (const auto& t : rec.at("triplets")) {
        if (!t.is_array() || t.empty()) continue;
        resolve(t.at(0), p.entity_keys);
        if (t.size() >= 3) resolve(t.at(2), p.entity_keys);
      }
    }
    out.propositions.push_back(std::move(p));
  }
  return out;
}

PropositionResult extract_propositions(Gateway& gw, std::string_view rewritten, const std::vector<Entity>& entities,
                                       const Chunk& source) {
  if (trim(rewritten).empty()) throw PreconditionError("extract_propositions: text is empty");
  try {
    auto r = gw.complete(PromptName::proposition_extract,
                         {{"paragraph", std::string(rewritten)}, {"entities", join_names(entities)}});
    return parse_propositions(parse_structured(r.text), entities, source);
  } catch (const StructuredParseError& e) {
    PropositionResult out;
    out.degraded = true;
    out.message = e.what();
    return out;
  } catch (const GatewayError& e) {
    PropositionResult out;
    out.degraded = true;
    out.message = e.what();
    return out;
  }
}

std::vector<Proposition> filter_entityless(std::vector<Proposition> props) {
  std::erase_if(props, [](const Proposition& p) { return p.entity_keys.empty(); });
  return props;
}

std::size_t ExtractionResult::distinct_entities() const {
  std::unordered_set<std::string> keys;
  for (const auto& c : chunks)
    for (const auto& e : c.entities) keys.insert(e.entity_key);
  return keys.size();
}

ExtractionResult extract_corpus(Gateway& gw, const std::vector<Chunk>& chunks, const ExtractionOptions& opts,
                                const std::map<std::string, ChunkExtraction>* reuse) {
  std::unordered_map<std::string, const Chunk*> by_pos;
  for (const auto& c : chunks) by_pos.emplace(c.doc_id + '\0' + std::to_string(c.seq), &c);

  ExtractionResult result;
  result.chunks.resize(chunks.size());
  std::vector<char> reused(chunks.size(), 0);

  parallel_for(chunks.size(), opts.workers, [&](std::size_t i) {
    const Chunk& chunk = chunks[i];
    const std::string hash = sha256_hex(chunk.text);
    if (reuse) {
      if (auto it = reuse->find(chunk.chunk_id); it != reuse->end() && it->second.text_hash == hash) {
        result.chunks[i] = it->second;
        reused[i] = 1;
        return;
      }
    }
    const Chunk* prev = nullptr;
    if (chunk.seq > 0) {
      if (auto it = by_pos.find(chunk.doc_id + '\0' + std::to_string(chunk.seq - 1)); it != by_pos.end())
        prev = it->second;
    }
    ChunkExtraction ce;
    ce.chunk_id = chunk.chunk_id;
    ce.doc_id = chunk.doc_id;
    ce.seq = chunk.seq;
    ce.text_hash = hash;

    auto rw = rewrite_chunk(gw, chunk, prev);
    if (rw.degraded) ce.degradations.push_back({chunk.chunk_id, "rewrite", rw.message});
    ce.rewritten = trim(rw.text).empty() ? chunk.text : rw.text;

    auto ents = extract_entities(gw, ce.rewritten);
    if (ents.degraded) ce.degradations.push_back({chunk.chunk_id, "entities", ents.message});
    ce.entities = std::move(ents.entities);

    auto props = extract_propositions(gw, ce.rewritten, ce.entities, chunk);
    if (props.degraded) ce.degradations.push_back({chunk.chunk_id, "propositions", props.message});
    for (auto& e : props.triplet_only_entities) ce.entities.push_back(std::move(e));
    ce.propositions = std::move(props.propositions);
    result.chunks[i] = std::move(ce);
  });

  // Chunks of one document are ordered by seq; documents keep input order.
  std::vector<std::size_t> order(chunks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::unordered_map<std::string, std::size_t> doc_rank;
  for (const auto& c : chunks) doc_rank.emplace(c.doc_id, doc_rank.size());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ra = doc_rank[chunks[a].doc_id];
    const auto rb = doc_rank[chunks[b].doc_id];
    return ra != rb ? ra < rb : chunks[a].seq < chunks[b].seq;
  });

  std::unordered_map<std::string, std::size_t> next_seq;
  for (std::size_t i : order) {
    auto& ce = result.chunks[i];
    for (auto& p : ce.propositions) {
      p.seq_in_doc = next_seq[p.doc_id]++;
      result.propositions.push_back(p);
    }
    for (const auto& d : ce.degradations) result.degradations.push_back(d);
    result.reused_chunks += reused[i];
  }
  return result;
}

void save_extraction(const std::filesystem::path& dir, const ExtractionResult& result) {
  std::filesystem::create_directories(dir);
  std::ofstream ents(dir / "entities.jsonl");
  std::ofstream props(dir / "propositions.jsonl");
  if (!ents || !props) throw Error("cannot write extraction artifacts in " + dir.string());
  for (const auto& c : result.chunks) {
    json rec = {{"chunk_id", c.chunk_id}, {"doc_id", c.doc_id}, {"seq", c.seq},
                {"text_hash", c.text_hash}, {"rewritten", c.rewritten}};
    rec["entities"] = json::array();
    for (const auto& e : c.entities) rec["entities"].push_back(entity_to_json(e));
    rec["degradations"] = json::array();
    for (const auto& d : c.degradations) rec["degradations"].push_back({{"stage", d.stage}, {"message", d.message}});
    ents << rec.dump() << '\n';
  }
  for (const auto& p : result.propositions) props << proposition_to_json(p).dump() << '\n';
}

std::vector<Proposition> load_propositions(const std::filesystem::path& file) {
  std::vector<Proposition> out;
  std::ifstream in(file);
  if (!in) throw ParseError("cannot open " + file.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(proposition_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::map<std::string, ChunkExtraction> load_extraction(const std::filesystem::path& dir) {
  std::map<std::string, ChunkExtraction> out;
  if (!std::filesystem::exists(dir / "entities.jsonl") || !std::filesystem::exists(dir / "propositions.jsonl"))
    return out;
  std::ifstream in(dir / "entities.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) return {};
    ChunkExtraction ce;
    ce.chunk_id = j.at("chunk_id").get<std::string>();
    ce.doc_id = j.at("doc_id").get<std::string>();
    ce.seq = j.at("seq").get<std::size_t>();
    ce.text_hash = j.at("text_hash").get<std::string>();
    ce.rewritten = j.at("rewritten").get<std::string>();
    for (const auto& e : j.at("entities")) {
      Entity ent;
      ent.canonical_name = e.at("name").get<std::string>();
      ent.entity_type = e.at("type").get<std::string>();
      ent.entity_key = e.at("key").get<std::string>();
      ce.entities.push_back(std::move(ent));
    }
    for (const auto& d : j.at("degradations"))
      ce.degradations.push_back({ce.chunk_id, d.at("stage").get<std::string>(), d.at("message").get<std::string>()});
    out.emplace(ce.chunk_id, std::move(ce));
  }
  for (auto& p : load_propositions(dir / "propositions.jsonl"))
    if (auto it = out.find(p.chunk_id); it != out.end()) it->second.propositions.push_back(std::move(p));
  return out;
}

}  // namespace dualtree
