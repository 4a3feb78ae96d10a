#include "dualtree/structured.hpp"

#include <cctype>
#include <optional>

#include "dualtree/errors.hpp"
#include "dualtree/text.hpp"

namespace dualtree {
namespace {

// End index (inclusive) of the object opened at `open`, or npos.
std::size_t match_object(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i;
  }
  return std::string_view::npos;
}

std::string repair(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      } else if (static_cast<unsigned char>(c) < 0x20) {
        // Collapse a raw line break and its indentation into one space.
        if (out.empty() || out.back() != ' ') out.push_back(' ');
        while (i + 1 < s.size() && (s[i + 1] == ' ' || s[i + 1] == '\t')) ++i;
        continue;
      }
      out.push_back(c);
      continue;
    }
    if (c == '"') in_string = true;
    if (c == ',') {
      std::size_t j = i + 1;
      while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
      if (j < s.size() && (s[j] == '}' || s[j] == ']')) continue;
    }
    out.push_back(c);
  }
  return out;
}

std::optional<ordered_json> try_parse(std::string_view candidate) {
  auto j = ordered_json::parse(candidate, nullptr, false);
  if (!j.is_discarded() && j.is_object()) return j;
  j = ordered_json::parse(repair(candidate), nullptr, false);
  if (!j.is_discarded() && j.is_object()) return j;
  return std::nullopt;
}

}  // namespace

ordered_json parse_structured(std::string_view text, ExpectedOutput schema) {
  if (schema == ExpectedOutput::free_text) return ordered_json(trim(text));
  std::size_t pos = text.find('{');
  while (pos != std::string_view::npos) {
    const std::size_t end = match_object(text, pos);
    if (end == std::string_view::npos) break;
    if (auto j = try_parse(text.substr(pos, end - pos + 1))) return *j;
    pos = text.find('{', pos + 1);
  }
  throw StructuredParseError("no parseable JSON object in model output", std::string(text));
}

}  // namespace dualtree
