#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dualtree {

// Byte range into a source string.
struct TextSpan {
  std::size_t offset = 0;
  std::size_t length = 0;
};

// Counting tokenizer: maximal runs of word bytes (ASCII alphanumerics and any
// byte >= 0x80, so UTF-8 sequences stay whole) form one token; every other
// non-space byte is a token on its own.
std::vector<TextSpan> tokenize_spans(std::string_view text);
std::size_t token_count(std::string_view text);

// Lowercased word tokens only (punctuation dropped). Used by BM25 and the mock
// embedding.
std::vector<std::string> word_tokens(std::string_view text);

// Sentence boundaries: a sentence ends at '.', '!' or '?' (plus closing quotes
// or brackets) followed by whitespace or end of text. Initials and a short list
// of honorific abbreviations do not end a sentence. Spans are trimmed.
std::vector<TextSpan> sentence_spans(std::string_view text);
std::vector<std::string> split_sentences(std::string_view text);

// First `max_tokens` tokens of `text`, cut at a token boundary.
std::string truncate_tokens(std::string_view text, std::size_t max_tokens);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
// Case-fold plus whitespace collapse.
std::string normalize_key(std::string_view s);
bool is_stopword(std::string_view lowered);

std::string sha256_hex(std::string_view data);
std::uint64_t fnv1a64(std::string_view data);

}  // namespace dualtree
