#include "dualtree/coverage.hpp"

#include <algorithm>
#include <fstream>

#include <spdlog/spdlog.h>

#include "dualtree/errors.hpp"
#include "dualtree/parallel.hpp"
#include "dualtree/text.hpp"

namespace dualtree {

using nlohmann::json;
using nlohmann::ordered_json;

void PairwiseEdgeSet::add(const std::string& a, const std::string& b) {
  if (a == b) return;
  if (a < b)
    edges_.emplace(a, b);
  else
    edges_.emplace(b, a);
}

bool PairwiseEdgeSet::contains(const std::string& a, const std::string& b) const {
  return a < b ? edges_.count({a, b}) > 0 : edges_.count({b, a}) > 0;
}

PairwiseEdgeSet PairwiseEdgeSet::intersect(const PairwiseEdgeSet& other) const {
  PairwiseEdgeSet out;
  std::set_intersection(edges_.begin(), edges_.end(), other.edges_.begin(), other.edges_.end(),
                        std::inserter(out.edges_, out.edges_.end()));
  return out;
}

PairwiseEdgeSet expand_pairwise(const std::vector<std::vector<std::string>>& clusters) {
  PairwiseEdgeSet out;
  for (const auto& c : clusters)
    for (std::size_t i = 0; i < c.size(); ++i)
      for (std::size_t j = i + 1; j < c.size(); ++j) out.add(c[i], c[j]);
  return out;
}

double coverage(const PairwiseEdgeSet& gold, const PairwiseEdgeSet& pred) {
  if (gold.empty()) throw UndefinedRatioError("coverage: gold edge set is empty");
  return 100.0 * static_cast<double>(gold.intersect(pred).size()) / static_cast<double>(gold.size());
}

double overlap_at_similarity(const PairwiseEdgeSet& gold, const PairwiseEdgeSet& sim, const PairwiseEdgeSet& rel) {
  const auto cs = gold.intersect(sim);
  if (cs.empty()) throw UndefinedRatioError("overlap@similarity: no correct similarity edges");
  const auto both = cs.intersect(gold.intersect(rel));
  return 100.0 * static_cast<double>(both.size()) / static_cast<double>(cs.size());
}

double overlap_at_relatedness(const PairwiseEdgeSet& gold, const PairwiseEdgeSet& sim, const PairwiseEdgeSet& rel) {
  const auto cr = gold.intersect(rel);
  if (cr.empty()) throw UndefinedRatioError("overlap@relatedness: no correct relatedness edges");
  const auto both = cr.intersect(gold.intersect(sim));
  return 100.0 * static_cast<double>(both.size()) / static_cast<double>(cr.size());
}

OverlapRatios overlap_ratios(const PairwiseEdgeSet& gold, const PairwiseEdgeSet& sim, const PairwiseEdgeSet& rel) {
  return {overlap_at_similarity(gold, sim, rel), overlap_at_relatedness(gold, sim, rel)};
}

Philosophy philosophy_from_string(std::string_view s) {
  if (s == "similarity") return Philosophy::similarity;
  if (s == "relatedness") return Philosophy::relatedness;
  throw ConfigError("unknown clustering philosophy '" + std::string(s) + "'");
}

PhilosophyResult run_philosophy_clustering(Gateway& gw, const std::vector<Document>& passages, Philosophy mode,
                                           const ClusteringParams& params, std::size_t workers) {
  if (passages.empty()) throw PreconditionError("run_philosophy_clustering: no passages");
  PhilosophyResult out;
  std::vector<std::string> texts(passages.size());
  if (mode == Philosophy::similarity) {
    for (std::size_t i = 0; i < passages.size(); ++i) texts[i] = passages[i].text;
  } else {
    std::vector<char> degraded(passages.size(), 0);
    parallel_for(passages.size(), workers, [&](std::size_t i) {
      try {
        texts[i] = trim(gw.complete(PromptName::topic, {{"paragraph", passages[i].text}}).text);
        if (texts[i].empty()) throw GatewayError("empty topic");
      } catch (const GatewayError& e) {
        spdlog::warn("topic fallback for {}: {}", passages[i].doc_id, e.what());
        const auto sents = split_sentences(passages[i].text);
        texts[i] = sents.empty() ? passages[i].text : sents.front();
        degraded[i] = 1;
      }
    });
    for (std::size_t i = 0; i < passages.size(); ++i)
      if (degraded[i]) out.degraded_ids.push_back(passages[i].doc_id);
    out.topics = texts;
  }

  const auto vecs = gw.embed(texts);
  Matrix<double> x(static_cast<Eigen::Index>(vecs.size()), vecs.front().size());
  for (std::size_t i = 0; i < vecs.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = vecs[i].cast<double>().transpose();
  const auto result = soft_cluster(x, params);
  for (const auto& c : result.clusters) {
    std::vector<std::string> ids;
    for (auto i : c) ids.push_back(passages[i].doc_id);
    out.clusters.push_back(std::move(ids));
  }
  return out;
}

std::vector<QuestionCluster> load_question_clusters(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot read " + file.string());
  std::vector<QuestionCluster> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      QuestionCluster qc;
      qc.question_id = j.at("id").get<std::string>();
      qc.supporting_ids = j.value("supporting_ids", std::vector<std::string>{});
      qc.distractor_ids = j.value("distractor_ids", std::vector<std::string>{});
      out.push_back(std::move(qc));
    } catch (const json::exception& e) {
      throw ParseError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::vector<std::string>> gold_clusters(const std::vector<QuestionCluster>& qcs, GoldMode mode) {
  std::vector<std::vector<std::string>> out;
  for (const auto& q : qcs) {
    auto ids = q.supporting_ids;
    if (mode == GoldMode::all) ids.insert(ids.end(), q.distractor_ids.begin(), q.distractor_ids.end());
    out.push_back(std::move(ids));
  }
  return out;
}

ordered_json CoverageReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  return ordered_json{{"coverage",
               {{"similarity", {{"supporting", sim_supporting}, {"all", sim_all}}},
                {"relatedness", {{"supporting", rel_supporting}, {"all", rel_all}}}}},
              {"overlap", {{"at_similarity", opt(overlap_at_similarity)}, {"at_relatedness", opt(overlap_at_relatedness)}}},
              {"edges",
               {{"gold_supporting", gold_supporting_edges},
                {"gold_all", gold_all_edges},
                {"similarity", sim_edges},
                {"relatedness", rel_edges}}},
              {"clusters", {{"similarity", sim_clusters}, {"relatedness", rel_clusters}}},
              {"degraded_ids", degraded_ids}};
}

CoverageReport coverage_report(const std::vector<QuestionCluster>& qcs, const PairwiseEdgeSet& sim,
                               const PairwiseEdgeSet& rel) {
  const auto gold_sup = expand_pairwise(gold_clusters(qcs, GoldMode::supporting_only));
  const auto gold_all = expand_pairwise(gold_clusters(qcs, GoldMode::all));
  CoverageReport r;
  r.sim_supporting = coverage(gold_sup, sim);
  r.sim_all = coverage(gold_all, sim);
  r.rel_supporting = coverage(gold_sup, rel);
  r.rel_all = coverage(gold_all, rel);
  if (!gold_sup.intersect(sim).empty()) r.overlap_at_similarity = overlap_at_similarity(gold_sup, sim, rel);
  if (!gold_sup.intersect(rel).empty()) r.overlap_at_relatedness = overlap_at_relatedness(gold_sup, sim, rel);
  r.gold_supporting_edges = gold_sup.size();
  r.gold_all_edges = gold_all.size();
  r.sim_edges = sim.size();
  r.rel_edges = rel.size();
  return r;
}

CoverageReport run_coverage(Gateway& gw, const std::vector<Document>& passages,
                            const std::vector<QuestionCluster>& qcs, const ClusteringParams& params,
                            std::size_t workers) {
  std::set<std::string> known;
  for (const auto& d : passages) known.insert(d.doc_id);
  for (const auto& q : qcs) {
    for (const auto* ids : {&q.supporting_ids, &q.distractor_ids})
      for (const auto& id : *ids)
        if (!known.count(id))
          throw ValidationError("question " + q.question_id + " cites unknown passage " + id);
  }
  const auto sim = run_philosophy_clustering(gw, passages, Philosophy::similarity, params, workers);
  const auto rel = run_philosophy_clustering(gw, passages, Philosophy::relatedness, params, workers);
  auto r = coverage_report(qcs, expand_pairwise(sim.clusters), expand_pairwise(rel.clusters));
  r.sim_clusters = sim.clusters.size();
  r.rel_clusters = rel.clusters.size();
  r.degraded_ids = rel.degraded_ids;
  return r;
}

}  // namespace dualtree
