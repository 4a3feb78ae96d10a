#include "dualtree/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "dualtree/errors.hpp"
#include "dualtree/parallel.hpp"
#include "dualtree/text.hpp"

namespace dualtree {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

double token_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : gold) ++counts[t];
  int same = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++same;
    }
  }
  if (same == 0) return 0.0;
  const double p = static_cast<double>(same) / static_cast<double>(pred.size());
  const double r = static_cast<double>(same) / static_cast<double>(gold.size());
  return 2.0 * p * r / (p + r);
}

}  // namespace

std::string normalize_answer(std::string_view s) {
  std::string lowered;
  lowered.reserve(s.size());
  for (unsigned char c : s) {
    if (c < 0x80 && std::ispunct(c)) continue;
    lowered += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
  }
  // Whitespace split also separates articles as whole words.
  std::string out;
  for (const auto& w : split_ws(lowered)) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

EmF1 score_em_f1(std::string_view prediction, const std::vector<std::string>& golds) {
  if (golds.empty()) throw PreconditionError("score_em_f1: no gold answers");
  const std::string p = normalize_answer(prediction);
  const auto ptoks = split_ws(p);
  EmF1 best;
  for (const auto& g : golds) {
    const std::string ng = normalize_answer(g);
    if (ng == p) best.em = 1;
    best.f1 = std::max(best.f1, token_f1(ptoks, split_ws(ng)));
  }
  return best;
}

std::string assemble_context(const RetrievalPool& pool, const std::vector<Hit>& hits) {
  std::string ctx;
  for (const auto& h : hits) {
    if (!ctx.empty()) ctx += "\n\n";
    ctx += pool.entry(h.index).text;
  }
  return ctx;
}

Answer answer_question(Gateway& gw, const RetrievalPool& pool, const QAItem& q, const PoolConfig& cfg) {
  if (cfg.top_k < 1) throw ConfigError("top_k must be >= 1");
  Answer a;
  double seconds = 0.0;

  std::vector<Hit> hits;
  if (cfg.retriever == Retriever::dense) {
    EmbedResult er;
    try {
      er = gw.embed_timed({q.question});
    } catch (const GatewayError& e) {
      throw RetrievalError(std::string("query embedding failed: ") + e.what());
    }
    seconds += er.latency_seconds;
    if (er.any_cached) {
      seconds -= er.cached_lookup_seconds;
      if (er.cached_original_latency_seconds)
        seconds += *er.cached_original_latency_seconds;
      else
        a.timing_valid = false;
    }
    const auto t0 = Clock::now();
    hits = pool.retrieve_dense(er.vectors.front(), cfg.top_k);
    seconds += since(t0);
  } else {
    const auto t0 = Clock::now();
    hits = pool.retrieve_bm25(q.question, cfg.top_k);
    seconds += since(t0);
  }

  a.context = assemble_context(pool, hits);
  for (const auto& h : hits) a.retrieved_ids.push_back(pool.entry(h.index).entry_id);

  const auto r = gw.complete(PromptName::qa_answer, {{"context", a.context}, {"question", q.question}});
  if (r.cached) {
    if (r.original_latency_seconds)
      seconds += *r.original_latency_seconds;
    else {
      seconds += r.latency_seconds;
      a.timing_valid = false;
    }
  } else {
    seconds += r.latency_seconds;
  }
  a.prediction = trim(r.text);
  a.tpq_seconds = std::max(0.0, seconds);
  return a;
}

void EvalReport::recompute() {
  mean_em = mean_f1 = mean_tpq = total_tpq = 0.0;
  timing_valid = true;
  std::size_t timed = 0;
  for (const auto& r : records) {
    mean_em += r.em;
    mean_f1 += r.f1;
    if (r.error) continue;
    total_tpq += r.tpq_seconds;
    ++timed;
    timing_valid = timing_valid && r.timing_valid;
  }
  if (!records.empty()) {
    mean_em = 100.0 * mean_em / static_cast<double>(records.size());
    mean_f1 = 100.0 * mean_f1 / static_cast<double>(records.size());
  }
  if (timed > 0) mean_tpq = total_tpq / static_cast<double>(timed);
}

ordered_json EvalReport::to_json() const {
  ordered_json recs = ordered_json::array();
  for (const auto& r : records) {
    ordered_json j{{"question_id", r.question_id},
           {"prediction", r.prediction},
           {"em", r.em},
           {"f1", r.f1},
           {"tpq_seconds", r.tpq_seconds},
           {"timing_valid", r.timing_valid},
           {"retrieved_ids", r.retrieved_ids}};
    if (r.error) j["error"] = *r.error;
    recs.push_back(std::move(j));
  }
  return ordered_json{{"label", label},
              {"pool_size", pool_size},
              {"aggregates",
               {{"questions", records.size()},
                {"mean_em", mean_em},
                {"mean_f1", mean_f1},
                {"mean_tpq", mean_tpq},
                {"total_tpq", total_tpq},
                {"timing_valid", timing_valid}}},
              {"records", recs}};
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport rep;
  try {
    rep.label = j.value("label", "");
    rep.pool_size = j.at("pool_size").get<std::size_t>();
    for (const auto& r : j.at("records")) {
      EvalRecord rec;
      rec.question_id = r.at("question_id").get<std::string>();
      rec.prediction = r.value("prediction", "");
      rec.em = r.at("em").get<int>();
      rec.f1 = r.at("f1").get<double>();
      rec.tpq_seconds = r.at("tpq_seconds").get<double>();
      rec.timing_valid = r.value("timing_valid", true);
      rec.retrieved_ids = r.value("retrieved_ids", std::vector<std::string>{});
      if (r.contains("error")) rec.error = r.at("error").get<std::string>();
      rep.records.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed report: ") + e.what());
  }
  rep.recompute();
  return rep;
}

EvalReport evaluate(Gateway& gw, const RetrievalPool& pool, const std::vector<QAItem>& items, const PoolConfig& cfg,
                    const EvalOptions& opts) {
  EvalReport rep;
  rep.pool_size = pool.size();
  rep.records.resize(items.size());
  parallel_for(items.size(), std::max<std::size_t>(1, opts.workers), [&](std::size_t i) {
    const auto& q = items[i];
    auto& rec = rep.records[i];
    rec.question_id = q.question_id;
    try {
      auto a = answer_question(gw, pool, q, cfg);
      const auto s = score_em_f1(a.prediction, q.gold_answers);
      rec.prediction = std::move(a.prediction);
      rec.em = s.em;
      rec.f1 = s.f1;
      rec.tpq_seconds = a.tpq_seconds;
      rec.timing_valid = a.timing_valid;
      rec.retrieved_ids = std::move(a.retrieved_ids);
    } catch (const GatewayError& e) {
      rec.error = e.what();
    } catch (const RetrievalError& e) {
      rec.error = e.what();
    }
    if (rec.error) spdlog::warn("question {} failed: {}", q.question_id, *rec.error);
  });
  rep.recompute();
  if (opts.workers > 1) rep.timing_valid = false;
  return rep;
}

EvalReport load_report(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot read " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
  return EvalReport::from_json(j);
}

void save_report(const std::filesystem::path& file, const EvalReport& report) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << report.to_json().dump(2) << '\n';
}

ordered_json EfficiencyComparison::to_json() const {
  return ordered_json{{"method_a", method_a}, {"method_b", method_b}, {"time_a", time_a}, {"time_b", time_b},
              {"pool_a", pool_a},     {"pool_b", pool_b},     {"tper", tper}};
}

double tper(double time_a, double time_b, double pool_a, double pool_b) {
  if (!(time_b > 0.0) || !(pool_a > 0.0) || !(pool_b > 0.0) || time_a < 0.0)
    throw PreconditionError("tper: times and pool sizes must be positive");
  return (time_a / time_b) / (pool_a / pool_b);
}

EfficiencyComparison compute_tper(const EvalReport& a, const EvalReport& b) {
  std::multiset<std::string> qa, qb;
  for (const auto& r : a.records) qa.insert(r.question_id);
  for (const auto& r : b.records) qb.insert(r.question_id);
  if (qa != qb) throw ValidationError("compute_tper: reports cover different question sets");
  EfficiencyComparison c;
  c.method_a = a.label;
  c.method_b = b.label;
  c.time_a = a.total_tpq;
  c.time_b = b.total_tpq;
  c.pool_a = a.pool_size;
  c.pool_b = b.pool_size;
  c.tper = tper(c.time_a, c.time_b, static_cast<double>(c.pool_a), static_cast<double>(c.pool_b));
  return c;
}

}  // namespace dualtree
