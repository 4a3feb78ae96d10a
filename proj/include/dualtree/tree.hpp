#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dualtree/clustering.hpp"
#include "dualtree/gateway.hpp"

namespace dualtree {

enum class TreeTag { similarity, relatedness };
enum class NodeKind { chunk_leaf, aggregate_leaf, summary };

std::string_view to_string(TreeTag t);
std::string_view to_string(NodeKind k);
TreeTag tree_tag_from_string(std::string_view s);
NodeKind node_kind_from_string(std::string_view s);

struct TreeNode {
  std::string node_id;
  TreeTag tree = TreeTag::similarity;
  int level = 0;
  NodeKind kind = NodeKind::chunk_leaf;
  std::string text;
  Embedding embedding;
  std::vector<std::string> child_ids;
  std::string provenance;  // chunk_id or agg_id for leaves
  bool promoted = false;   // singleton cluster carried up without summarizing
  bool fallback = false;   // summarizer failed; text is a truncated concatenation
};

struct IndexTree {
  TreeTag tag = TreeTag::similarity;
  std::vector<TreeNode> nodes;
  std::vector<std::vector<std::size_t>> levels;  // node indices per level

  int max_level() const { return levels.empty() ? -1 : static_cast<int>(levels.size()) - 1; }
  const TreeNode* find(const std::string& node_id) const;
  std::size_t edge_count() const;
};

struct LeafInput {
  std::string text;
  std::string provenance;
};

struct TreeConfig {
  int max_levels = 4;  // total levels including the leaves
  ClusteringParams clustering;
  std::size_t summary_token_budget = 512;
  std::size_t workers = 4;
};

// Summarize prompt over the members joined by blank lines, cut to the budget.
std::string summarize_cluster(Gateway& gw, const std::vector<std::string>& member_texts,
                              std::size_t token_budget = 512);

// Recursive cluster-then-summarize. Level 0 holds the embedded leaves; each
// soft cluster of level l becomes one node at level l+1. Singleton clusters are
// promoted without a model call. Stops at one node, at the level cap, or when
// a level produces no multi-member cluster.
IndexTree build_tree(Gateway& gw, const std::vector<LeafInput>& leaves, TreeTag tag, const TreeConfig& cfg);

// Structural checks; returns human-readable violations (empty when sound).
std::vector<std::string> check_tree(const IndexTree& tree, int max_levels);

}  // namespace dualtree
