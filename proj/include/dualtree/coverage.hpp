#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dualtree/clustering.hpp"
#include "dualtree/corpus.hpp"
#include "dualtree/gateway.hpp"

namespace dualtree {

// Unordered passage-id pairs, stored smaller id first. Self pairs are ignored.
class PairwiseEdgeSet {
 public:
  using Edge = std::pair<std::string, std::string>;

  void add(const std::string& a, const std::string& b);
  bool contains(const std::string& a, const std::string& b) const;
  std::size_t size() const { return edges_.size(); }
  bool empty() const { return edges_.empty(); }
  const std::set<Edge>& edges() const { return edges_; }

  PairwiseEdgeSet intersect(const PairwiseEdgeSet& other) const;
  bool operator==(const PairwiseEdgeSet& other) const { return edges_ == other.edges_; }

 private:
  std::set<Edge> edges_;
};

PairwiseEdgeSet expand_pairwise(const std::vector<std::vector<std::string>>& clusters);

// 100 * |gold ∩ pred| / |gold|. Throws UndefinedRatioError when gold is empty.
double coverage(const PairwiseEdgeSet& gold, const PairwiseEdgeSet& pred);

struct OverlapRatios {
  double at_similarity = 0.0;
  double at_relatedness = 0.0;
};

// Shared correct edges relative to each side's correct edges. Each function
// throws UndefinedRatioError when its denominator set is empty.
double overlap_at_similarity(const PairwiseEdgeSet& gold, const PairwiseEdgeSet& sim, const PairwiseEdgeSet& rel);
double overlap_at_relatedness(const PairwiseEdgeSet& gold, const PairwiseEdgeSet& sim, const PairwiseEdgeSet& rel);
OverlapRatios overlap_ratios(const PairwiseEdgeSet& gold, const PairwiseEdgeSet& sim, const PairwiseEdgeSet& rel);

enum class Philosophy { similarity, relatedness };
Philosophy philosophy_from_string(std::string_view s);

struct PhilosophyResult {
  std::vector<std::vector<std::string>> clusters;  // doc ids
  std::vector<std::string> topics;                 // relatedness mode, per passage
  std::vector<std::string> degraded_ids;           // topic prompt failed; first sentence used
};

// Similarity: cluster passage embeddings. Relatedness: ask the topic prompt per
// passage, embed the topics, cluster those.
PhilosophyResult run_philosophy_clustering(Gateway& gw, const std::vector<Document>& passages, Philosophy mode,
                                           const ClusteringParams& params, std::size_t workers = 4);

struct QuestionCluster {
  std::string question_id;
  std::vector<std::string> supporting_ids;
  std::vector<std::string> distractor_ids;
};

// JSON Lines: {"id", "supporting_ids", "distractor_ids"}.
std::vector<QuestionCluster> load_question_clusters(const std::filesystem::path& file);

enum class GoldMode { supporting_only, all };
std::vector<std::vector<std::string>> gold_clusters(const std::vector<QuestionCluster>& qcs, GoldMode mode);

struct CoverageReport {
  double sim_supporting = 0.0;
  double sim_all = 0.0;
  double rel_supporting = 0.0;
  double rel_all = 0.0;
  std::optional<double> overlap_at_similarity;  // supporting-only gold
  std::optional<double> overlap_at_relatedness;
  std::size_t gold_supporting_edges = 0;
  std::size_t gold_all_edges = 0;
  std::size_t sim_edges = 0;
  std::size_t rel_edges = 0;
  std::size_t sim_clusters = 0;
  std::size_t rel_clusters = 0;
  std::vector<std::string> degraded_ids;

  nlohmann::ordered_json to_json() const;
};

CoverageReport coverage_report(const std::vector<QuestionCluster>& qcs, const PairwiseEdgeSet& sim,
                               const PairwiseEdgeSet& rel);

CoverageReport run_coverage(Gateway& gw, const std::vector<Document>& passages,
                            const std::vector<QuestionCluster>& qcs, const ClusteringParams& params,
                            std::size_t workers = 4);

}  // namespace dualtree
