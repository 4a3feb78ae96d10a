#include <algorithm>
#include <cctype>
#include <chrono>
#include <map>
#include <unordered_set>

#include <json.hpp>

#include "dualtree/errors.hpp"
#include "dualtree/gateway.hpp"
#include "dualtree/text.hpp"

namespace dualtree {
namespace {

using nlohmann::ordered_json;

struct Word {
  std::string text;
  bool capitalized = false;
  bool joins_next = false;  // only spaces between this word and the next
};

bool word_byte(unsigned char c) {
  return std::isalnum(c) != 0 || c >= 0x80;
}

bool is_calendar_word(std::string_view w) {
  static const std::unordered_set<std::string_view> kWords = {
      "January", "February", "March", "April", "May", "June", "July", "August",
      "September", "October", "November", "December", "Monday", "Tuesday",
      "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"};
  return kWords.count(w) != 0;
}

bool is_leading_filler(std::string_view w) {
  static const std::unordered_set<std::string_view> kWords = {
      "The", "A", "An", "This", "That", "These", "Those", "He", "She", "It", "They", "We", "I", "You",
      "His", "Her", "Its", "Their", "Our", "My", "In", "On", "At", "By", "For", "From", "With", "Without",
      "After", "Before", "During", "Since", "Until", "As", "And", "But", "Or", "If", "When", "Where",
      "Who", "Whom", "Whose", "What", "Which", "Why", "How", "Is", "Was", "Are", "Were", "Did", "Does",
      "Do", "There", "Here", "Still", "Others", "Other", "Overall", "Also", "Both", "Some", "Many",
      "Most", "One", "Each", "Every", "All", "Sir", "Lord", "Lady", "Mr", "Mrs", "Ms", "Dr", "Born",
      "According", "However", "Although", "Then", "Today", "Later", "Year", "Rewrite"};
  return kWords.count(w) != 0;
}

std::vector<Word> scan_words(std::string_view text) {
  std::vector<Word> words;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    if (!word_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n) {
      const auto c = static_cast<unsigned char>(text[j]);
      if (word_byte(c)) {
        ++j;
      } else if ((c == '-' || c == '\'') && j + 1 < n && word_byte(static_cast<unsigned char>(text[j + 1]))) {
        ++j;
      } else {
        break;
      }
    }
    std::string w(text.substr(i, j - i));
    bool possessive = false;
    for (std::string_view suffix : {std::string_view("'s"), std::string_view("\xE2\x80\x99s")}) {
      if (w.size() > suffix.size() && std::string_view(w).substr(w.size() - suffix.size()) == suffix) {
        w.resize(w.size() - suffix.size());
        possessive = true;
      }
    }
    Word word;
    word.capitalized = std::isupper(static_cast<unsigned char>(w[0])) != 0 && !is_calendar_word(w);
    word.text = std::move(w);
    std::size_t k = j;
    while (k < n && text[k] == ' ') ++k;
    word.joins_next = !possessive && k > j && k < n && word_byte(static_cast<unsigned char>(text[k]));
    words.push_back(std::move(word));
    i = j;
  }
  return words;
}

bool is_boundary(std::string_view s, std::size_t pos) {
  return pos >= s.size() || !word_byte(static_cast<unsigned char>(s[pos]));
}

// Case-insensitive whole-word occurrences of `needle` in `hay`.
std::vector<std::size_t> find_all(std::string_view hay, std::string_view needle) {
  std::vector<std::size_t> out;
  if (needle.empty()) return out;
  const std::string h = to_lower(hay);
  const std::string nd = to_lower(needle);
  std::size_t pos = h.find(nd);
  while (pos != std::string::npos) {
    if ((pos == 0 || is_boundary(h, pos - 1)) && is_boundary(h, pos + nd.size())) out.push_back(pos);
    pos = h.find(nd, pos + 1);
  }
  return out;
}

bool mentions(std::string_view hay, std::string_view needle) {
  return !find_all(hay, needle).empty();
}

std::string first_sentence(std::string_view unit) {
  auto s = split_sentences(unit);
  return s.empty() ? trim(unit) : s.front();
}

std::vector<std::string> split_units(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t next = text.find("\n\n", pos);
    const auto piece = trim(text.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (!piece.empty()) out.push_back(piece);
    if (next == std::string_view::npos) break;
    pos = next + 2;
  }
  return out;
}

std::vector<std::string> split_entity_list(std::string_view list) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const std::size_t next = list.find(", ", pos);
    auto name = trim(list.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (!name.empty()) out.push_back(std::move(name));
    if (next == std::string_view::npos) break;
    pos = next + 2;
  }
  return out;
}

// Spans in first-seen order, one per distinct key.
std::vector<std::string> unique_spans(std::string_view text) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (auto& s : capitalized_spans(text))
    if (seen.insert(normalize_key(s)).second) out.push_back(std::move(s));
  return out;
}

std::string mock_entities(const PromptBindings& slots) {
  ordered_json out = ordered_json::object();
  int n = 0;
  for (const auto& s : unique_spans(slots.at("paragraph")))
    out["n" + std::to_string(++n)] = {{"name", s}, {"type", "Entity"}};
  return out.dump(4);
}

std::string mock_propositions(const PromptBindings& slots) {
  const auto listed = split_entity_list(slots.at("entities"));
  ordered_json out = ordered_json::object();
  int n = 0;
  for (const auto& sentence : split_sentences(slots.at("paragraph"))) {
    std::vector<std::pair<std::size_t, std::string>> found;
    std::unordered_set<std::string> keys;
    auto add = [&](const std::string& name) {
      const auto pos = find_all(sentence, name);
      if (pos.empty() || !keys.insert(normalize_key(name)).second) return;
      found.emplace_back(pos.front(), name);
    };
    for (const auto& e : listed) add(e);
    for (const auto& e : unique_spans(sentence)) add(e);
    if (found.empty()) continue;
    std::stable_sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    ordered_json triplets = ordered_json::array();
    if (found.size() == 1) {
      triplets.push_back({found[0].second, "is mentioned with", found[0].second});
    } else {
      for (std::size_t k = 1; k < found.size(); ++k)
        triplets.push_back({found[0].second, "is related to", found[k].second});
    }
    out["f" + std::to_string(++n)] = {{"fact", sentence}, {"triplets", triplets}};
  }
  return out.dump(4);
}

std::string mock_summary(const PromptBindings& slots) {
  std::string out;
  for (const auto& unit : split_units(slots.at("text"))) {
    if (!out.empty()) out += ' ';
    out += first_sentence(unit);
  }
  return out;
}

std::string mock_topic(const PromptBindings& slots) {
  const auto& para = slots.at("paragraph");
  const auto spans = capitalized_spans(para);
  if (spans.empty()) {
    std::string out;
    int taken = 0;
    for (const auto& w : word_tokens(para)) {
      if (is_stopword(w)) continue;
      if (!out.empty()) out += ' ';
      out += w;
      if (++taken == 6) break;
    }
    return out.empty() ? trim(para) : out;
  }
  std::map<std::string, int> freq;
  for (const auto& s : spans) ++freq[normalize_key(s)];
  const std::string* best = &spans.front();
  for (const auto& s : spans)
    if (freq[normalize_key(s)] > freq[normalize_key(*best)]) best = &s;
  return *best;
}

// Two-hop keyword chaining: sentences naming a question entity expose bridge
// entities; sentences naming a bridge (but no question entity) supply answer
// candidates. Candidates rank by context frequency, then first occurrence.
std::string mock_answer(const PromptBindings& slots) {
  const auto& context = slots.at("context");
  const auto& question = slots.at("question");

  std::vector<std::string> sentences;
  for (const auto& unit : split_units(context))
    for (auto& s : split_sentences(unit)) sentences.push_back(std::move(s));

  std::vector<std::string> qkeys;
  for (const auto& s : unique_spans(question)) qkeys.push_back(normalize_key(s));
  auto overlaps = [](const std::string& a, const std::string& b) {
    return a == b || a.find(b) != std::string::npos || b.find(a) != std::string::npos;
  };
  auto in_set = [&](const std::string& key, const std::vector<std::string>& set) {
    return std::any_of(set.begin(), set.end(), [&](const std::string& k) { return overlaps(key, k); });
  };

  std::vector<bool> anchor(sentences.size(), false);
  if (!qkeys.empty()) {
    for (std::size_t i = 0; i < sentences.size(); ++i)
      for (const auto& q : qkeys)
        if (mentions(sentences[i], q)) anchor[i] = true;
  } else {
    std::unordered_set<std::string> qwords;
    for (const auto& w : word_tokens(question))
      if (!is_stopword(w)) qwords.insert(w);
    std::vector<int> overlap(sentences.size(), 0);
    int best = 0;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      for (const auto& w : word_tokens(sentences[i])) overlap[i] += static_cast<int>(qwords.count(w));
      best = std::max(best, overlap[i]);
    }
    for (std::size_t i = 0; i < sentences.size(); ++i) anchor[i] = best > 0 && overlap[i] == best;
  }

  std::vector<std::string> bridges;
  std::vector<std::string> bridge_keys;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (!anchor[i]) continue;
    for (const auto& s : unique_spans(sentences[i])) {
      const auto key = normalize_key(s);
      if (in_set(key, qkeys) || std::find(bridge_keys.begin(), bridge_keys.end(), key) != bridge_keys.end())
        continue;
      bridges.push_back(s);
      bridge_keys.push_back(key);
    }
  }

  std::vector<std::string> candidates;
  std::vector<std::string> cand_keys;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (anchor[i]) continue;
    const bool has_bridge = std::any_of(bridges.begin(), bridges.end(),
                                        [&](const std::string& b) { return mentions(sentences[i], b); });
    if (!has_bridge) continue;
    for (const auto& s : unique_spans(sentences[i])) {
      const auto key = normalize_key(s);
      if (in_set(key, qkeys) || in_set(key, bridge_keys) ||
          std::find(cand_keys.begin(), cand_keys.end(), key) != cand_keys.end())
        continue;
      candidates.push_back(s);
      cand_keys.push_back(key);
    }
  }
  if (candidates.empty()) candidates = bridges;
  if (candidates.empty()) {
    for (const auto& s : unique_spans(context))
      if (!in_set(normalize_key(s), qkeys)) candidates.push_back(s);
  }
  if (candidates.empty()) return "unknown";

  const std::string* best = nullptr;
  std::size_t best_count = 0;
  std::size_t best_pos = 0;
  for (const auto& c : candidates) {
    const auto hits = find_all(context, c);
    const std::size_t count = hits.size();
    const std::size_t pos = hits.empty() ? context.size() : hits.front();
    if (!best || count > best_count || (count == best_count && pos < best_pos)) {
      best = &c;
      best_count = count;
      best_pos = pos;
    }
  }
  return *best;
}

std::string mock_hierarchy(const PromptBindings& slots) {
  return split_sentences(slots.at("paragraph")).size() > 3 ? "high" : "low";
}

}  // namespace

std::vector<std::string> capitalized_spans(std::string_view text) {
  std::vector<std::string> out;
  const auto words = scan_words(text);
  std::size_t i = 0;
  while (i < words.size()) {
    if (!words[i].capitalized) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < words.size() && words[j].joins_next && words[j + 1].capitalized) ++j;
    std::size_t b = i;
    while (b <= j && is_leading_filler(words[b].text)) ++b;
    if (b <= j) {
      std::string span = words[b].text;
      for (std::size_t k = b + 1; k <= j; ++k) span += " " + words[k].text;
      out.push_back(std::move(span));
    }
    i = j + 1;
  }
  return out;
}

Embedding hashed_embedding(std::string_view text, int dim) {
  Embedding v = Embedding::Zero(dim);
  const auto tokens = word_tokens(text);
  std::vector<const std::string*> content;
  for (const auto& t : tokens)
    if (!is_stopword(t)) content.push_back(&t);
  if (content.empty())
    for (const auto& t : tokens) content.push_back(&t);
  if (content.empty()) {
    v[static_cast<Eigen::Index>(fnv1a64(text) % static_cast<std::uint64_t>(dim))] = 1.0F;
    return v;
  }
  for (const auto* t : content) v[static_cast<Eigen::Index>(fnv1a64(*t) % static_cast<std::uint64_t>(dim))] += 1.0F;
  v.normalize();
  return v;
}

CompletionResponse MockBackend::complete(const CompletionRequest& req) {
  const auto t0 = std::chrono::steady_clock::now();
  PromptBindings slots;
  try {
    slots = unrender(prompt(req.prompt), req.text);
  } catch (const ParseError& e) {
    throw PreconditionError(std::string("mock backend: ") + e.what());
  }
  CompletionResponse r;
  switch (req.prompt) {
    case PromptName::rewrite: r.text = slots.at("paragraph"); break;
    case PromptName::entity_extract: r.text = mock_entities(slots); break;
    case PromptName::proposition_extract: r.text = mock_propositions(slots); break;
    case PromptName::summarize: r.text = mock_summary(slots); break;
    case PromptName::topic: r.text = mock_topic(slots); break;
    case PromptName::qa_answer: r.text = mock_answer(slots); break;
    case PromptName::hierarchy_label: r.text = mock_hierarchy(slots); break;
  }
  r.usage.prompt_tokens = static_cast<int>(token_count(req.text));
  r.usage.completion_tokens = static_cast<int>(token_count(r.text));
  r.latency_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::vector<Embedding> MockBackend::embed(const std::vector<std::string>& texts, const std::string&) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(hashed_embedding(t));
  return out;
}

}  // namespace dualtree
