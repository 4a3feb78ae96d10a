#include "dualtree/index_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "dualtree/errors.hpp"
#include "dualtree/text.hpp"

namespace dualtree {
namespace {

using nlohmann::json;

template <typename T>
void put_le(std::ofstream& out, T value) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::ifstream& in, const std::filesystem::path& file) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw ParseError(file.string() + ": truncated header");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_embeddings(const std::filesystem::path& file, const std::vector<Embedding>& rows) {
  const std::uint32_t dim = rows.empty() ? 0 : static_cast<std::uint32_t>(rows.front().size());
  for (const auto& r : rows)
    if (static_cast<std::uint32_t>(r.size()) != dim) throw Error("write_embeddings: ragged rows");
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + file.string());
  out.write(kEmbeddingMagic, 4);
  put_le<std::uint32_t>(out, kEmbeddingFormatVersion);
  put_le<std::uint64_t>(out, rows.size());
  put_le<std::uint32_t>(out, dim);
  for (const auto& r : rows)
    for (Eigen::Index i = 0; i < r.size(); ++i) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(r[i]));
}

std::vector<Embedding> read_embeddings(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ParseError("cannot open " + file.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kEmbeddingMagic, 4) != 0)
    throw ParseError(file.string() + ": bad magic");
  const auto version = get_le<std::uint32_t>(in, file);
  if (version != kEmbeddingFormatVersion)
    throw ParseError(file.string() + ": unsupported version " + std::to_string(version));
  const auto count = get_le<std::uint64_t>(in, file);
  const auto dim = get_le<std::uint32_t>(in, file);
  std::vector<Embedding> rows(count, Embedding(dim));
  for (auto& r : rows)
    for (std::uint32_t i = 0; i < dim; ++i) {
      unsigned char buf[4];
      if (!in.read(reinterpret_cast<char*>(buf), 4)) throw ParseError(file.string() + ": truncated payload");
      const std::uint32_t bits = static_cast<std::uint32_t>(buf[0]) | (static_cast<std::uint32_t>(buf[1]) << 8) |
                                 (static_cast<std::uint32_t>(buf[2]) << 16) |
                                 (static_cast<std::uint32_t>(buf[3]) << 24);
      r[i] = std::bit_cast<float>(bits);
    }
  return rows;
}

void save_trees(const std::filesystem::path& dir, const IndexTree& sim, const IndexTree& rel) {
  std::filesystem::create_directories(dir);
  std::ofstream nodes(dir / "nodes.jsonl");
  std::ofstream edges(dir / "edges.jsonl");
  if (!nodes || !edges) throw Error("cannot write tree files in " + dir.string());
  std::vector<Embedding> rows;
  for (const IndexTree* t : {&sim, &rel}) {
    for (const auto& n : t->nodes) {
      nodes << json{{"node_id", n.node_id},
                    {"tree", to_string(n.tree)},
                    {"level", n.level},
                    {"kind", to_string(n.kind)},
                    {"text", n.text},
                    {"child_ids", n.child_ids},
                    {"provenance", n.provenance},
                    {"promoted", n.promoted},
                    {"fallback", n.fallback},
                    {"row", rows.size()}}
                   .dump()
            << '\n';
      rows.push_back(n.embedding);
      for (const auto& c : n.child_ids)
        edges << json{{"tree", to_string(n.tree)}, {"parent", n.node_id}, {"child", c}}.dump() << '\n';
    }
  }
  write_embeddings(dir / "embeddings.bin", rows);
}

std::pair<IndexTree, IndexTree> load_trees(const std::filesystem::path& dir) {
  const auto rows = read_embeddings(dir / "embeddings.bin");
  std::ifstream in(dir / "nodes.jsonl");
  if (!in) throw ParseError("cannot open " + (dir / "nodes.jsonl").string());
  IndexTree sim;
  sim.tag = TreeTag::similarity;
  IndexTree rel;
  rel.tag = TreeTag::relatedness;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto j = json::parse(line);
    TreeNode n;
    n.node_id = j.at("node_id").get<std::string>();
    n.tree = tree_tag_from_string(j.at("tree").get<std::string>());
    n.level = j.at("level").get<int>();
    n.kind = node_kind_from_string(j.at("kind").get<std::string>());
    n.text = j.at("text").get<std::string>();
    n.child_ids = j.at("child_ids").get<std::vector<std::string>>();
    n.provenance = j.at("provenance").get<std::string>();
    n.promoted = j.value("promoted", false);
    n.fallback = j.value("fallback", false);
    const auto row = j.at("row").get<std::size_t>();
    if (row >= rows.size()) throw ParseError("node " + n.node_id + " points past embeddings.bin");
    n.embedding = rows[row];
    IndexTree& t = n.tree == TreeTag::similarity ? sim : rel;
    if (n.level < 0) throw ParseError("node " + n.node_id + " has negative level");
    if (t.levels.size() <= static_cast<std::size_t>(n.level)) t.levels.resize(static_cast<std::size_t>(n.level) + 1);
    t.levels[static_cast<std::size_t>(n.level)].push_back(t.nodes.size());
    t.nodes.push_back(std::move(n));
  }
  return {std::move(sim), std::move(rel)};
}

}  // namespace dualtree
