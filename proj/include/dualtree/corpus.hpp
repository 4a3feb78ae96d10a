#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace dualtree {

struct Document {
  std::string doc_id;
  std::string title;
  std::string text;
};

struct Chunk {
  std::string chunk_id;
  std::string doc_id;
  std::size_t seq = 0;
  std::string text;
  std::size_t token_count = 0;
};

struct QAItem {
  std::string question_id;
  std::string question;
  std::vector<std::string> gold_answers;
  std::vector<std::string> supporting_doc_ids;
};

enum class CorpusFormat { jsonl_passages };
enum class QAFormat { jsonl_qa };

CorpusFormat parse_corpus_format(const std::string& tag);

inline constexpr std::size_t kDefaultMaxChunkTokens = 512;
inline constexpr std::size_t kMinChunkTokens = 32;

// Reads one document per line. Records without an `id` get a content-hash id.
// Throws ParseError naming the line, ValidationError on duplicate ids.
std::vector<Document> load_corpus(const std::filesystem::path& path,
                                  CorpusFormat format = CorpusFormat::jsonl_passages);
void save_corpus(const std::filesystem::path& path, const std::vector<Document>& docs);

std::vector<QAItem> load_qa(const std::filesystem::path& path, QAFormat format = QAFormat::jsonl_qa);
// Throws ValidationError when an item cites a doc id absent from `docs`.
void validate_qa(const std::vector<QAItem>& items, const std::vector<Document>& docs);

std::string content_doc_id(const std::string& title, const std::string& text);
std::string make_chunk_id(const std::string& doc_id, std::size_t seq);

// Packs whole sentences greedily into chunks of at most `max_tokens` tokens.
// A sentence longer than the budget is cut into token windows.
std::vector<Chunk> chunk_document(const Document& doc, std::size_t max_tokens = kDefaultMaxChunkTokens);
std::vector<Chunk> chunk_corpus(const std::vector<Document>& docs,
                                std::size_t max_tokens = kDefaultMaxChunkTokens);

}  // namespace dualtree
