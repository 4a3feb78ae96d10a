#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "dualtree/tree.hpp"

namespace dualtree {

// embeddings.bin: "SRRG" magic, u32 version, u64 count, u32 dim, then
// count*dim little-endian float32 values, row-major.
inline constexpr char kEmbeddingMagic[4] = {'S', 'R', 'R', 'G'};
inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

void write_embeddings(const std::filesystem::path& file, const std::vector<Embedding>& rows);
std::vector<Embedding> read_embeddings(const std::filesystem::path& file);

// nodes.jsonl + edges.jsonl + embeddings.bin for both trees (similarity first).
void save_trees(const std::filesystem::path& dir, const IndexTree& sim, const IndexTree& rel);
std::pair<IndexTree, IndexTree> load_trees(const std::filesystem::path& dir);

}  // namespace dualtree
