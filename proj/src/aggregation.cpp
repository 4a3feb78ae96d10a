#include "dualtree/aggregation.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "dualtree/errors.hpp"
#include "dualtree/text.hpp"

namespace dualtree {
namespace {

using nlohmann::json;

std::string as_sentence(const std::string& text) {
  std::string s = trim(text);
  std::size_t e = s.size();
  while (e > 0 && (s[e - 1] == '"' || s[e - 1] == '\'' || s[e - 1] == ')')) --e;
  if (e == 0 || (s[e - 1] != '.' && s[e - 1] != '!' && s[e - 1] != '?')) s += '.';
  return s;
}

}  // namespace

std::vector<PropositionAggregate> build_aggregates(const std::vector<Proposition>& props,
                                                   const AggregationOptions& opts) {
  std::vector<const Proposition*> ordered;
  ordered.reserve(props.size());
  for (const auto& p : props) {
    if (p.entity_keys.empty())
      throw PreconditionError("build_aggregates: proposition '" + p.prop_id + "' has no entity");
    ordered.push_back(&p);
  }
  std::sort(ordered.begin(), ordered.end(), [](const Proposition* a, const Proposition* b) {
    if (a->doc_id != b->doc_id) return a->doc_id < b->doc_id;
    if (a->seq_in_doc != b->seq_in_doc) return a->seq_in_doc < b->seq_in_doc;
    return a->prop_id < b->prop_id;
  });

  std::map<std::string, std::vector<const Proposition*>> groups;
  for (const auto* p : ordered) {
    std::set<std::string> keys(p->entity_keys.begin(), p->entity_keys.end());
    for (const auto& k : keys) groups[k].push_back(p);
  }

  std::vector<PropositionAggregate> out;
  for (const auto& [key, members] : groups) {
    std::vector<std::vector<const Proposition*>> parts(1);
    std::size_t tokens = 0;
    for (const auto* p : members) {
      const std::size_t t = token_count(as_sentence(p->text));
      if (!parts.back().empty() && tokens + t > opts.token_budget) {
        parts.emplace_back();
        tokens = 0;
      }
      parts.back().push_back(p);
      tokens += t;
    }
    for (std::size_t k = 0; k < parts.size(); ++k) {
      PropositionAggregate a;
      a.entity_key = key;
      a.agg_id = parts.size() == 1 ? "agg:" + key : "agg:" + key + "#" + std::to_string(k);
      std::set<std::string> docs;
      for (const auto* p : parts[k]) {
        a.prop_ids.push_back(p->prop_id);
        if (!a.text.empty()) a.text += ' ';
        a.text += as_sentence(p->text);
        docs.insert(p->doc_id);
      }
      a.member_doc_ids.assign(docs.begin(), docs.end());
      out.push_back(std::move(a));
    }
  }
  return out;
}

AggregateStats aggregate_stats(const std::vector<PropositionAggregate>& aggs) {
  AggregateStats s;
  if (aggs.empty()) return s;
  std::map<std::string, std::size_t> per_entity;
  for (const auto& a : aggs) per_entity[a.entity_key] += a.prop_ids.size();
  s.aggregates = aggs.size();
  s.entities = per_entity.size();
  std::size_t total = 0;
  s.min_props_per_entity = per_entity.begin()->second;
  for (const auto& [k, n] : per_entity) {
    total += n;
    s.max_props_per_entity = std::max(s.max_props_per_entity, n);
    s.min_props_per_entity = std::min(s.min_props_per_entity, n);
  }
  s.avg_props_per_entity = static_cast<double>(total) / static_cast<double>(per_entity.size());
  return s;
}

void save_aggregates(const std::filesystem::path& file, const std::vector<PropositionAggregate>& aggs) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  for (const auto& a : aggs)
    out << json{{"agg_id", a.agg_id},
                {"entity_key", a.entity_key},
                {"prop_ids", a.prop_ids},
                {"text", a.text},
                {"member_doc_ids", a.member_doc_ids}}
               .dump()
        << '\n';
}

std::vector<PropositionAggregate> load_aggregates(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ParseError("cannot open " + file.string());
  std::vector<PropositionAggregate> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto j = json::parse(line);
    PropositionAggregate a;
    a.agg_id = j.at("agg_id").get<std::string>();
    a.entity_key = j.at("entity_key").get<std::string>();
    a.prop_ids = j.at("prop_ids").get<std::vector<std::string>>();
    a.text = j.at("text").get<std::string>();
    a.member_doc_ids = j.value("member_doc_ids", std::vector<std::string>{});
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace dualtree
