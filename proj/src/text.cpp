#include "dualtree/text.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <stdexcept>
#include <unordered_set>

namespace dualtree {
namespace {

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) != 0 || c >= 0x80;
}

bool is_space(unsigned char c) {
  return std::isspace(c) != 0;
}

bool is_closer(char c) {
  return c == '"' || c == '\'' || c == ')' || c == ']';
}

// Words whose trailing period does not end a sentence.
const std::unordered_set<std::string>& abbreviations() {
  static const std::unordered_set<std::string> kAbbrev = {
      "mr", "mrs", "ms", "dr", "st", "jr", "sr", "prof", "gen", "col",
      "lt", "sgt", "capt", "rev", "vs", "etc", "no", "inc", "co", "ltd",
      "vt", "wash", "mt", "ft", "u.s", "e.g", "i.e"};
  return kAbbrev;
}

}  // namespace

std::vector<TextSpan> tokenize_spans(std::string_view text) {
  std::vector<TextSpan> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
    } else if (is_word_byte(c)) {
      std::size_t j = i;
      while (j < n && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
      out.push_back({i, j - i});
      i = j;
    } else {
      out.push_back({i, 1});
      ++i;
    }
  }
  return out;
}

std::size_t token_count(std::string_view text) {
  return tokenize_spans(text).size();
}

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& sp : tokenize_spans(text)) {
    if (!is_word_byte(static_cast<unsigned char>(text[sp.offset]))) continue;
    out.push_back(to_lower(text.substr(sp.offset, sp.length)));
  }
  return out;
}

std::vector<TextSpan> sentence_spans(std::string_view text) {
  std::vector<TextSpan> out;
  const std::size_t n = text.size();
  std::size_t start = 0;

  auto emit = [&](std::size_t b, std::size_t e) {
    while (b < e && is_space(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && is_space(static_cast<unsigned char>(text[e - 1]))) --e;
    if (e > b) out.push_back({b, e - b});
  };

  for (std::size_t i = 0; i < n; ++i) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?') continue;
    std::size_t end = i + 1;
    while (end < n && (text[end] == '.' || text[end] == '!' || text[end] == '?')) ++end;
    while (end < n && is_closer(text[end])) ++end;
    if (end < n && !is_space(static_cast<unsigned char>(text[end]))) continue;

    if (c == '.') {
      // Word immediately before the period.
      std::size_t w = i;
      while (w > start && !is_space(static_cast<unsigned char>(text[w - 1])) &&
             text[w - 1] != '(' && text[w - 1] != '"')
        --w;
      const std::string word = to_lower(text.substr(w, i - w));
      std::size_t first = start;
      while (first < i && is_space(static_cast<unsigned char>(text[first]))) ++first;
      if (word.size() == 1 && std::isalpha(static_cast<unsigned char>(word[0])) && w > first) {
        // Initial such as "John P. Parker": mid-sentence, next word capitalized.
        std::size_t k = end;
        while (k < n && is_space(static_cast<unsigned char>(text[k]))) ++k;
        if (k < n && std::isupper(static_cast<unsigned char>(text[k]))) continue;
      }
      if (abbreviations().count(word) != 0) continue;
    }
    emit(start, end);
    start = end;
    i = end - 1;
  }
  emit(start, n);
  return out;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& sp : sentence_spans(text)) out.emplace_back(text.substr(sp.offset, sp.length));
  return out;
}

std::string truncate_tokens(std::string_view text, std::size_t max_tokens) {
  const auto spans = tokenize_spans(text);
  if (spans.size() <= max_tokens) return std::string(text);
  if (max_tokens == 0) return {};
  const auto& last = spans[max_tokens - 1];
  return std::string(text.substr(0, last.offset + last.length));
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return out;
}

std::string normalize_key(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

bool is_stopword(std::string_view lowered) {
  static const std::unordered_set<std::string_view> kStop = {
      "a", "an", "the", "and", "or", "but", "of", "in", "on", "at", "to",
      "for", "from", "by", "with", "as", "is", "was", "were", "are", "be",
      "been", "being", "it", "its", "this", "that", "these", "those", "he",
      "she", "they", "his", "her", "their", "him", "them", "who", "whom",
      "which", "what", "when", "where", "why", "how", "did", "does", "do",
      "has", "have", "had", "not", "s", "into", "than", "then", "also",
      "there", "so", "such", "about", "after", "before", "over", "under"};
  return kStop.count(lowered) != 0;
}

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace dualtree
