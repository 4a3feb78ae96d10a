#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "dualtree/aggregation.hpp"
#include "dualtree/errors.hpp"
#include "dualtree/extraction.hpp"
#include "dualtree/text.hpp"
#include "support.hpp"

using namespace dualtree;
using dualtree::testing::fast_config;
using dualtree::testing::ScriptedBackend;
using dualtree::testing::temp_dir;

namespace {

const char* kEntityOutput = R"({
    "n1": {"name": "Eli Lilly", "type": "Organization"},
    "n2": {"name": "Synergy-NASH", "type": "Clinical Trial"},
    "n4": {"name": "tirzepatide", "type": "Drug"},
    "n5": {"name": "nonalcoholic steatohepatitis", "type": "Disease"},
    "n6": {"name": "metabolic dysfunction-associated steatohepatitis", "type": "Disease"},
    "n7": {"name": "year-end earnings report", "type": "Document"}
})";

const char* kDrugSales =
    "Drug sales for Eli Lilly's Mounjaro and Novo Nordisk's semaglutide are reaching record highs as new therapies "
    "are developed and approved.";

Chunk chunk(const std::string& doc, std::size_t seq, const std::string& text) {
  return {make_chunk_id(doc, seq), doc, seq, text, token_count(text)};
}

Proposition prop(const std::string& id, const std::string& doc, std::size_t seq, std::vector<std::string> keys,
                 const std::string& text = "") {
  Proposition p;
  p.prop_id = id;
  p.chunk_id = doc + "#0";
  p.doc_id = doc;
  p.seq_in_doc = seq;
  p.text = text.empty() ? "fact " + id + "." : text;
  p.entity_keys = std::move(keys);
  return p;
}

std::vector<std::string> keys_of(const std::vector<Entity>& es) {
  std::vector<std::string> out;
  for (const auto& e : es) out.push_back(e.entity_key);
  return out;
}

// Brute-force grouping: every key, every proposition carrying it, sorted by (doc, seq).
std::map<std::string, std::vector<std::string>> oracle_groups(const std::vector<Proposition>& props) {
  std::set<std::string> keys;
  for (const auto& p : props) keys.insert(p.entity_keys.begin(), p.entity_keys.end());
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& k : keys) {
    std::vector<const Proposition*> members;
    for (const auto& p : props)
      if (std::count(p.entity_keys.begin(), p.entity_keys.end(), k) > 0) members.push_back(&p);
    std::sort(members.begin(), members.end(), [](auto* a, auto* b) {
      return std::tie(a->doc_id, a->seq_in_doc) < std::tie(b->doc_id, b->seq_in_doc);
    });
    for (const auto* m : members) out[k].push_back(m->prop_id);
  }
  return out;
}

std::vector<Proposition> random_props(std::mt19937& rng) {
  const int docs = 1 + static_cast<int>(rng() % 5);
  const int n = 1 + static_cast<int>(rng() % 30);
  const int vocab = 1 + static_cast<int>(rng() % 8);
  std::vector<Proposition> out;
  std::map<std::string, std::size_t> seq;
  for (int i = 0; i < n; ++i) {
    const std::string doc = "d" + std::to_string(rng() % static_cast<unsigned>(docs));
    std::set<std::string> ks;
    const int nk = 1 + static_cast<int>(rng() % 3);
    for (int k = 0; k < nk; ++k) ks.insert("e" + std::to_string(rng() % static_cast<unsigned>(vocab)));
    const std::string id = "p" + std::to_string(i);
    out.push_back(prop(id, doc, seq[doc]++, {ks.begin(), ks.end()}, "alpha" + std::to_string(i) + " beta" + std::to_string(i) + "."));
  }
  return out;
}

}  // namespace

TEST_SUITE("extraction") {
  TEST_CASE("mock rewrite is the identity and the first chunk has no context") {
    std::string seen;
    auto be = std::make_shared<ScriptedBackend>([&](const CompletionRequest& r) {
      seen = r.text;
      return unrender(prompt(PromptName::rewrite), r.text).at("paragraph");
    });
    Gateway gw(be, fast_config());
    const auto c = chunk("d", 0, "She went home.");
    const auto r = rewrite_chunk(gw, c, nullptr);
    CHECK(r.text == "She went home.");
    CHECK_FALSE(r.degraded);
    CHECK(unrender(prompt(PromptName::rewrite), seen).at("previous_paragraph").empty());
  }

  TEST_CASE("rewrite falls back to the original text") {
    auto be = std::make_shared<ScriptedBackend>([](const CompletionRequest&) -> std::string { throw GatewayError("x"); });
    Gateway gw(be, fast_config());
    const auto r = rewrite_chunk(gw, chunk("d", 0, "Original."), nullptr);
    CHECK(r.degraded);
    CHECK(r.text == "Original.");
    CHECK_THROWS_AS(rewrite_chunk(gw, chunk("d", 0, " "), nullptr), PreconditionError);
  }

  TEST_CASE("published entity example parses in response order") {
    auto be = std::make_shared<ScriptedBackend>([](const CompletionRequest&) { return std::string(kEntityOutput); });
    Gateway gw(be, fast_config());
    const auto r = extract_entities(gw, "Tucked into Eli Lilly's year-end earnings report ...");
    REQUIRE(r.entities.size() == 6);
    CHECK(r.entities[0].canonical_name == "Eli Lilly");
    CHECK(r.entities[0].entity_type == "Organization");
    CHECK(r.entities[2].canonical_name == "tirzepatide");
    CHECK(r.entities[2].entity_type == "Drug");
    CHECK(r.entities[0].entity_key == "eli lilly");
  }

  TEST_CASE("duplicate entity names merge") {
    const auto es = parse_entities(parse_structured(
        R"({"n1": {"name": "John Parker", "type": "Person"}, "n2": {"name": "john  parker", "type": "Person"}})"));
    REQUIRE(es.size() == 1);
    CHECK(es[0].canonical_name == "John Parker");
  }

  TEST_CASE("bad JSON degrades to an empty list") {
    auto be = std::make_shared<ScriptedBackend>([](const CompletionRequest&) { return std::string("I cannot."); });
    Gateway gw(be, fast_config());
    const auto r = extract_entities(gw, "Some paragraph.");
    CHECK(r.degraded);
    CHECK(r.entities.empty());
    const auto p = extract_propositions(gw, "Some paragraph.", {}, chunk("d", 0, "Some paragraph."));
    CHECK(p.degraded);
    CHECK(p.propositions.empty());
    CHECK_THROWS_AS(extract_entities(gw, ""), PreconditionError);
    CHECK_THROWS_AS(extract_propositions(gw, "  ", {}, chunk("d", 0, "x.")), PreconditionError);
  }

  TEST_CASE("mock entities on lowercase text are empty") {
    Gateway gw(std::make_shared<MockBackend>());
    CHECK(extract_entities(gw, "nothing here is capitalized.").entities.empty());
  }

  TEST_CASE("proposition with and without entities") {
    const std::vector<Entity> known = {make_entity("Eli Lilly", "Organization"), make_entity("Mounjaro", "Drug"),
                                       make_entity("Novo Nordisk", "Organization"),
                                       make_entity("semaglutide", "Drug")};
    nlohmann::ordered_json j = {
        {"f1", {{"fact", "Drug sales are reaching record highs as new therapies are developed and approved."},
                {"triplets", nlohmann::ordered_json::array()}}},
        {"f2",
         {{"fact", kDrugSales},
          {"triplets",
           {{"Eli Lilly", "sells", "Mounjaro"}, {"Novo Nordisk", "sells", "Semaglutide"}, {"Mounjaro", "has", "record highs"}}}}}};
    const auto src = chunk("news", 0, "x");
    const auto r = parse_propositions(j, known, src);
    REQUIRE(r.propositions.size() == 2);
    CHECK(r.propositions[0].entity_keys.empty());
    const std::set<std::string> got(r.propositions[1].entity_keys.begin(), r.propositions[1].entity_keys.end());
    for (const auto* k : {"eli lilly", "mounjaro", "novo nordisk", "semaglutide"}) CHECK(got.count(k) == 1);
    // "record highs" is not a known entity: it is added as triplet-only.
    REQUIRE(r.triplet_only_entities.size() == 1);
    CHECK(r.triplet_only_entities[0].entity_key == "record highs");
    CHECK(r.propositions[1].chunk_id == src.chunk_id);
    CHECK(r.propositions[0].prop_id != r.propositions[1].prop_id);

    const auto kept = filter_entityless(r.propositions);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].text == kDrugSales);
    CHECK(filter_entityless({r.propositions[0]}).empty());
  }

  TEST_CASE("corpus extraction orders propositions by document and chunk") {
    Gateway gw(std::make_shared<MockBackend>());
    const std::vector<Chunk> chunks = {chunk("b", 1, "Paris is big. Rome is old."), chunk("a", 0, "Oslo is cold."),
                                       chunk("b", 0, "London is wet."), chunk("a", 1, "Bergen rains.")};
    ExtractionOptions opts;
    opts.workers = 3;
    const auto r = extract_corpus(gw, chunks, opts);
    REQUIRE(r.chunks.size() == 4);
    for (std::size_t i = 0; i < chunks.size(); ++i) CHECK(r.chunks[i].chunk_id == chunks[i].chunk_id);
    std::vector<std::string> texts;
    for (const auto& p : r.propositions) texts.push_back(p.text);
    CHECK(texts == std::vector<std::string>{"London is wet.", "Paris is big.", "Rome is old.", "Oslo is cold.",
                                            "Bergen rains."});
    std::map<std::string, std::size_t> last;
    for (const auto& p : r.propositions) {
      if (last.count(p.doc_id)) CHECK(p.seq_in_doc == last[p.doc_id] + 1);
      last[p.doc_id] = p.seq_in_doc;
    }
    CHECK(r.distinct_entities() == 5);

    const auto again = extract_corpus(gw, chunks, opts);
    REQUIRE(again.propositions.size() == r.propositions.size());
    for (std::size_t i = 0; i < r.propositions.size(); ++i) {
      CHECK(again.propositions[i].prop_id == r.propositions[i].prop_id);
      CHECK(again.propositions[i].entity_keys == r.propositions[i].entity_keys);
    }
  }

  TEST_CASE("saved extraction is reused for unchanged chunks") {
    auto be = std::make_shared<ScriptedBackend>([](const CompletionRequest& r) {
      MockBackend m;
      return m.complete(r).text;
    });
    Gateway gw(be, fast_config());
    const std::vector<Chunk> chunks = {chunk("a", 0, "Oslo is cold."), chunk("b", 0, "London is wet.")};
    const auto first = extract_corpus(gw, chunks);
    const auto dir = temp_dir("extract");
    save_extraction(dir, first);
    const auto loaded = load_extraction(dir);
    REQUIRE(loaded.size() == 2);
    CHECK(keys_of(loaded.at(chunks[0].chunk_id).entities) == keys_of(first.chunks[0].entities));

    const int calls = be->completions;
    auto changed = chunks;
    changed[1].text = "London is dry.";
    const auto second = extract_corpus(gw, changed, {}, &loaded);
    CHECK(second.reused_chunks == 1);
    CHECK(be->completions == calls + 3);
    CHECK(second.propositions.back().text == "London is dry.");

    const auto props = load_propositions(dir / "propositions.jsonl");
    REQUIRE(props.size() == first.propositions.size());
    CHECK(props[0].entity_keys == first.propositions[0].entity_keys);
  }
}

TEST_SUITE("aggregation") {
  TEST_CASE("two propositions, two entities") {
    const auto aggs = build_aggregates({prop("p1", "d", 0, {"e1"}), prop("p2", "d", 1, {"e1", "e2"})});
    REQUIRE(aggs.size() == 2);
    CHECK(aggs[0].entity_key == "e1");
    CHECK(aggs[0].prop_ids == std::vector<std::string>{"p1", "p2"});
    CHECK(aggs[1].prop_ids == std::vector<std::string>{"p2"});
    CHECK(aggs[0].text == "fact p1. fact p2.");
    CHECK(aggs[0].member_doc_ids == std::vector<std::string>{"d"});
  }

  TEST_CASE("entity-less proposition is a precondition error") {
    CHECK_THROWS_AS(build_aggregates({prop("p", "d", 0, {})}), PreconditionError);
  }

  TEST_CASE("stats on sizes one and three") {
    const auto aggs = build_aggregates(
        {prop("p1", "d", 0, {"a", "b"}), prop("p2", "d", 1, {"b"}), prop("p3", "d", 2, {"b"})});
    const auto s = aggregate_stats(aggs);
    CHECK(s.aggregates == 2);
    CHECK(s.avg_props_per_entity == doctest::Approx(2.0));
    CHECK(s.max_props_per_entity == 3);
    CHECK(s.min_props_per_entity == 1);
    CHECK(aggregate_stats({}).aggregates == 0);
  }

  TEST_CASE("oversized aggregates split into parts") {
    std::vector<Proposition> ps;
    for (int i = 0; i < 6; ++i) ps.push_back(prop("p" + std::to_string(i), "d", i, {"e"}, "one two three four."));
    AggregationOptions opts;
    opts.token_budget = 10;  // each fact is 5 tokens
    const auto aggs = build_aggregates(ps, opts);
    REQUIRE(aggs.size() == 3);
    CHECK(aggs[0].agg_id == "agg:e#0");
    CHECK(aggs[2].agg_id == "agg:e#2");
    for (const auto& a : aggs) {
      CHECK(a.prop_ids.size() == 2);
      CHECK(token_count(a.text) <= 10);
    }
  }

  TEST_CASE("grouping matches the brute-force oracle under shuffling") {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      auto ps = random_props(rng);
      const auto expect = oracle_groups(ps);
      std::shuffle(ps.begin(), ps.end(), rng);
      const auto aggs = build_aggregates(ps);
      REQUIRE(aggs.size() == expect.size());
      std::size_t member_total = 0, key_total = 0;
      for (const auto& a : aggs) {
        CHECK(a.prop_ids == expect.at(a.entity_key));
        member_total += a.prop_ids.size();
      }
      for (const auto& p : ps) key_total += p.entity_keys.size();
      CHECK(member_total == key_total);
    }
  }

  TEST_CASE("aggregates sharing a proposition share tokens") {
    std::mt19937 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      const auto aggs = build_aggregates(random_props(rng));
      for (std::size_t i = 0; i < aggs.size(); ++i)
        for (std::size_t j = i + 1; j < aggs.size(); ++j) {
          std::set<std::string> a(aggs[i].prop_ids.begin(), aggs[i].prop_ids.end());
          const bool shared = std::any_of(aggs[j].prop_ids.begin(), aggs[j].prop_ids.end(),
                                          [&](const std::string& id) { return a.count(id) > 0; });
          if (!shared) continue;
          const auto wi = word_tokens(aggs[i].text);
          const std::set<std::string> ti(wi.begin(), wi.end());
          const auto wj = word_tokens(aggs[j].text);
          CHECK(std::any_of(wj.begin(), wj.end(), [&](const std::string& w) { return ti.count(w) > 0; }));
        }
    }
  }

  TEST_CASE("save and load round-trip") {
    const auto aggs = build_aggregates({prop("p1", "d", 0, {"e1"}), prop("p2", "c", 0, {"e1", "e2"})});
    const auto dir = temp_dir("agg");
    save_aggregates(dir / "a.jsonl", aggs);
    const auto back = load_aggregates(dir / "a.jsonl");
    REQUIRE(back.size() == aggs.size());
    for (std::size_t i = 0; i < aggs.size(); ++i) {
      CHECK(back[i].agg_id == aggs[i].agg_id);
      CHECK(back[i].prop_ids == aggs[i].prop_ids);
      CHECK(back[i].text == aggs[i].text);
      CHECK(back[i].member_doc_ids == aggs[i].member_doc_ids);
    }
  }
}
