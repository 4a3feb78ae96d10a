#include "dualtree/tree.hpp"

#include <set>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "dualtree/errors.hpp"
#include "dualtree/parallel.hpp"
#include "dualtree/text.hpp"

namespace dualtree {
namespace {

std::string node_id(TreeTag tag, int level, std::size_t index) {
  return std::string(tag == TreeTag::similarity ? "sim" : "rel") + ":" + std::to_string(level) + ":" +
         std::to_string(index);
}

Matrix<double> stack(const IndexTree& tree, const std::vector<std::size_t>& idx) {
  const auto dim = tree.nodes[idx.front()].embedding.size();
  Matrix<double> x(static_cast<Eigen::Index>(idx.size()), dim);
  for (std::size_t r = 0; r < idx.size(); ++r)
    x.row(static_cast<Eigen::Index>(r)) = tree.nodes[idx[r]].embedding.cast<double>().transpose();
  return x;
}

}  // namespace

std::string_view to_string(TreeTag t) {
  return t == TreeTag::similarity ? "similarity" : "relatedness";
}

std::string_view to_string(NodeKind k) {
  switch (k) {
    case NodeKind::chunk_leaf: return "chunk_leaf";
    case NodeKind::aggregate_leaf: return "aggregate_leaf";
    case NodeKind::summary: return "summary";
  }
  return "unknown";
}

TreeTag tree_tag_from_string(std::string_view s) {
  if (s == "similarity") return TreeTag::similarity;
  if (s == "relatedness") return TreeTag::relatedness;
  throw ParseError("unknown tree tag '" + std::string(s) + "'");
}

NodeKind node_kind_from_string(std::string_view s) {
  if (s == "chunk_leaf") return NodeKind::chunk_leaf;
  if (s == "aggregate_leaf") return NodeKind::aggregate_leaf;
  if (s == "summary") return NodeKind::summary;
  throw ParseError("unknown node kind '" + std::string(s) + "'");
}

const TreeNode* IndexTree::find(const std::string& id) const {
  for (const auto& n : nodes)
    if (n.node_id == id) return &n;
  return nullptr;
}

std::size_t IndexTree::edge_count() const {
  std::size_t e = 0;
  for (const auto& n : nodes) e += n.child_ids.size();
  return e;
}

std::string summarize_cluster(Gateway& gw, const std::vector<std::string>& member_texts, std::size_t token_budget) {
  if (member_texts.empty()) throw PreconditionError("summarize_cluster: no members");
  std::string joined;
  for (const auto& t : member_texts) {
    if (!joined.empty()) joined += "\n\n";
    joined += trim(t);
  }
  auto r = gw.complete(PromptName::summarize, {{"text", joined}});
  return truncate_tokens(trim(r.text), token_budget);
}

IndexTree build_tree(Gateway& gw, const std::vector<LeafInput>& leaves, TreeTag tag, const TreeConfig& cfg) {
  if (leaves.empty()) throw PreconditionError("build_tree: no leaves");
  if (cfg.max_levels < 1) throw ConfigError("build_tree: max_levels must be >= 1");

  IndexTree tree;
  tree.tag = tag;
  {
    std::vector<std::string> texts;
    for (const auto& l : leaves) texts.push_back(l.text);
    auto vecs = gw.embed(texts);
    tree.levels.emplace_back();
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      TreeNode n;
      n.node_id = node_id(tag, 0, i);
      n.tree = tag;
      n.level = 0;
      n.kind = tag == TreeTag::similarity ? NodeKind::chunk_leaf : NodeKind::aggregate_leaf;
      n.text = leaves[i].text;
      n.embedding = std::move(vecs[i]);
      n.provenance = leaves[i].provenance;
      tree.levels.back().push_back(tree.nodes.size());
      tree.nodes.push_back(std::move(n));
    }
  }

  while (tree.levels.back().size() > 1 && static_cast<int>(tree.levels.size()) < cfg.max_levels) {
    const int level = static_cast<int>(tree.levels.size()) - 1;
    const auto current = tree.levels.back();
    ClusteringParams params = cfg.clustering;
    params.seed = cfg.clustering.seed + static_cast<std::uint64_t>(level);
    auto result = soft_cluster(stack(tree, current), params);

    // Soft clustering can produce the same member set twice.
    std::vector<std::vector<std::size_t>> clusters;
    std::set<std::vector<std::size_t>> seen;
    for (auto& c : result.clusters)
      if (seen.insert(c).second) clusters.push_back(std::move(c));
    const bool progress =
        std::any_of(clusters.begin(), clusters.end(), [](const auto& c) { return c.size() > 1; });
    if (!progress) break;

    std::vector<TreeNode> next(clusters.size());
    std::vector<std::size_t> to_summarize;
    for (std::size_t c = 0; c < clusters.size(); ++c) {
      auto& n = next[c];
      n.node_id = node_id(tag, level + 1, c);
      n.tree = tag;
      n.level = level + 1;
      n.kind = NodeKind::summary;
      for (auto m : clusters[c]) n.child_ids.push_back(tree.nodes[current[m]].node_id);
      if (clusters[c].size() == 1) {
        const auto& child = tree.nodes[current[clusters[c].front()]];
        n.text = child.text;
        n.embedding = child.embedding;
        n.promoted = true;
      } else {
        to_summarize.push_back(c);
      }
    }

    parallel_for(to_summarize.size(), cfg.workers, [&](std::size_t s) {
      const std::size_t c = to_summarize[s];
      std::vector<std::string> texts;
      for (auto m : clusters[c]) texts.push_back(tree.nodes[current[m]].text);
      try {
        next[c].text = summarize_cluster(gw, texts, cfg.summary_token_budget);
      } catch (const GatewayError& e) {
        spdlog::warn("summary fallback for {}: {}", next[c].node_id, e.what());
        std::string joined;
        for (const auto& t : texts) joined += (joined.empty() ? "" : " ") + trim(t);
        next[c].text = truncate_tokens(joined, cfg.summary_token_budget);
        next[c].fallback = true;
      }
    });

    if (!to_summarize.empty()) {
      std::vector<std::string> texts;
      for (auto c : to_summarize) texts.push_back(next[c].text);
      auto vecs = gw.embed(texts);
      for (std::size_t s = 0; s < to_summarize.size(); ++s) next[to_summarize[s]].embedding = std::move(vecs[s]);
    }

    tree.levels.emplace_back();
    for (auto& n : next) {
      tree.levels.back().push_back(tree.nodes.size());
      tree.nodes.push_back(std::move(n));
    }
  }
  return tree;
}

std::vector<std::string> check_tree(const IndexTree& tree, int max_levels) {
  std::vector<std::string> problems;
  std::unordered_map<std::string, const TreeNode*> by_id;
  for (const auto& n : tree.nodes) {
    if (!by_id.emplace(n.node_id, &n).second) problems.push_back("duplicate node id " + n.node_id);
    if (n.tree != tree.tag) problems.push_back(n.node_id + " belongs to the other tree");
  }
  if (tree.max_level() + 1 > max_levels)
    problems.push_back("tree has " + std::to_string(tree.max_level() + 1) + " levels");

  for (const auto& n : tree.nodes) {
    if (n.level == 0) {
      if (!n.child_ids.empty()) problems.push_back(n.node_id + ": leaf with children");
      if (n.kind == NodeKind::summary) problems.push_back(n.node_id + ": leaf marked summary");
      continue;
    }
    if (n.kind != NodeKind::summary) problems.push_back(n.node_id + ": inner node not a summary");
    if (n.child_ids.empty()) problems.push_back(n.node_id + ": summary without children");
    for (const auto& c : n.child_ids) {
      auto it = by_id.find(c);
      if (it == by_id.end()) {
        problems.push_back(n.node_id + ": dangling child " + c);
      } else if (it->second->level != n.level - 1) {
        problems.push_back(n.node_id + ": child " + c + " skips a level");
      }
    }
  }

  // Every node below the top level has a parent one level up.
  std::unordered_set<std::string> has_parent;
  for (const auto& n : tree.nodes)
    for (const auto& c : n.child_ids) has_parent.insert(c);
  for (const auto& n : tree.nodes)
    if (n.level < tree.max_level() && has_parent.count(n.node_id) == 0)
      problems.push_back(n.node_id + ": orphan below the top level");
  return problems;
}

}  // namespace dualtree
