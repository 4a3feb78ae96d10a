#include "dualtree/corpus.hpp"

#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "dualtree/errors.hpp"
#include "dualtree/text.hpp"

namespace dualtree {
namespace {

using nlohmann::json;

std::string record_context(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

std::vector<std::string> string_array(const json& j, const char* field, const std::string& where) {
  std::vector<std::string> out;
  if (!j.contains(field) || j.at(field).is_null()) return out;
  if (!j.at(field).is_array()) throw ParseError(where + ": field '" + field + "' must be an array");
  for (const auto& v : j.at(field)) {
    if (!v.is_string()) throw ParseError(where + ": field '" + field + "' must hold strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(record_context(path, lineno) + ": malformed record: " + e.what());
    }
    if (!j.is_object()) throw ParseError(record_context(path, lineno) + ": record is not an object");
    fn(j, record_context(path, lineno));
  }
}

}  // namespace

CorpusFormat parse_corpus_format(const std::string& tag) {
  if (tag == "jsonl-passages") return CorpusFormat::jsonl_passages;
  throw ConfigError("unknown corpus format '" + tag + "'");
}

std::string content_doc_id(const std::string& title, const std::string& text) {
  return "d" + sha256_hex(title + "\n" + text).substr(0, 16);
}

std::string make_chunk_id(const std::string& doc_id, std::size_t seq) {
  return doc_id + "#" + std::to_string(seq);
}

std::vector<Document> load_corpus(const std::filesystem::path& path, CorpusFormat) {
  std::vector<Document> docs;
  std::unordered_set<std::string> explicit_ids;
  std::unordered_map<std::string, int> hashed_ids;
  for_each_json_line(path, [&](const json& j, const std::string& where) {
    Document d;
    if (!j.contains("text") || !j.at("text").is_string())
      throw ParseError(where + ": missing string field 'text'");
    d.text = j.at("text").get<std::string>();
    if (trim(d.text).empty()) throw ValidationError(where + ": empty text");
    if (j.contains("title") && j.at("title").is_string()) d.title = j.at("title").get<std::string>();
    if (j.contains("id") && !j.at("id").is_null()) {
      d.doc_id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      if (!explicit_ids.insert(d.doc_id).second)
        throw ValidationError(where + ": duplicate doc_id '" + d.doc_id + "'");
    } else {
      // Identical hashed records keep distinct ids through a suffix.
      const std::string base = content_doc_id(d.title, d.text);
      const int n = hashed_ids[base]++;
      d.doc_id = n == 0 ? base : base + "-" + std::to_string(n);
    }
    docs.push_back(std::move(d));
  });
  std::unordered_set<std::string> seen;
  for (const auto& d : docs)
    if (!seen.insert(d.doc_id).second)
      throw ValidationError("duplicate doc_id '" + d.doc_id + "'");
  return docs;
}

void save_corpus(const std::filesystem::path& path, const std::vector<Document>& docs) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& d : docs) out << json{{"id", d.doc_id}, {"title", d.title}, {"text", d.text}}.dump() << '\n';
}

std::vector<QAItem> load_qa(const std::filesystem::path& path, QAFormat) {
  std::vector<QAItem> items;
  std::unordered_set<std::string> ids;
  for_each_json_line(path, [&](const json& j, const std::string& where) {
    QAItem q;
    if (!j.contains("question") || !j.at("question").is_string())
      throw ParseError(where + ": missing string field 'question'");
    q.question = j.at("question").get<std::string>();
    q.question_id = j.contains("id") ? (j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump())
                                     : "q" + sha256_hex(q.question).substr(0, 12);
    q.gold_answers = string_array(j, "answers", where);
    if (q.gold_answers.empty()) throw ValidationError(where + ": 'answers' must be nonempty");
    q.supporting_doc_ids = string_array(j, "supporting_ids", where);
    if (!ids.insert(q.question_id).second)
      throw ValidationError(where + ": duplicate question id '" + q.question_id + "'");
    items.push_back(std::move(q));
  });
  return items;
}

void validate_qa(const std::vector<QAItem>& items, const std::vector<Document>& docs) {
  std::unordered_set<std::string> known;
  for (const auto& d : docs) known.insert(d.doc_id);
  for (const auto& q : items)
    for (const auto& id : q.supporting_doc_ids)
      if (known.count(id) == 0)
        throw ValidationError("question '" + q.question_id + "' cites unknown doc '" + id + "'");
}

std::vector<Chunk> chunk_document(const Document& doc, std::size_t max_tokens) {
  if (max_tokens < kMinChunkTokens)
    throw PreconditionError("max_tokens must be >= " + std::to_string(kMinChunkTokens));

  // Units are whole sentences, or token windows of an oversized sentence.
  std::vector<TextSpan> units;
  std::vector<std::size_t> unit_tokens;
  for (const auto& s : sentence_spans(doc.text)) {
    const std::string_view sv(doc.text.data() + s.offset, s.length);
    auto toks = tokenize_spans(sv);
    if (toks.size() <= max_tokens) {
      units.push_back(s);
      unit_tokens.push_back(toks.size());
      continue;
    }
    for (std::size_t b = 0; b < toks.size(); b += max_tokens) {
      const std::size_t e = std::min(toks.size(), b + max_tokens);
      const std::size_t off = toks[b].offset;
      const std::size_t end = toks[e - 1].offset + toks[e - 1].length;
      units.push_back({s.offset + off, end - off});
      unit_tokens.push_back(e - b);
    }
  }

  std::vector<Chunk> chunks;
  auto flush = [&](std::size_t first, std::size_t last, std::size_t tokens) {
    const std::size_t begin = units[first].offset;
    const std::size_t end = units[last].offset + units[last].length;
    Chunk c;
    c.doc_id = doc.doc_id;
    c.seq = chunks.size();
    c.chunk_id = make_chunk_id(doc.doc_id, c.seq);
    c.text = doc.text.substr(begin, end - begin);
    c.token_count = tokens;
    chunks.push_back(std::move(c));
  };

  std::size_t first = 0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (i > first && tokens + unit_tokens[i] > max_tokens) {
      flush(first, i - 1, tokens);
      first = i;
      tokens = 0;
    }
    tokens += unit_tokens[i];
  }
  if (!units.empty()) flush(first, units.size() - 1, tokens);
  return chunks;
}

std::vector<Chunk> chunk_corpus(const std::vector<Document>& docs, std::size_t max_tokens) {
  std::vector<Chunk> out;
  for (const auto& d : docs) {
    auto cs = chunk_document(d, max_tokens);
    out.insert(out.end(), std::make_move_iterator(cs.begin()), std::make_move_iterator(cs.end()));
  }
  return out;
}

}  // namespace dualtree
