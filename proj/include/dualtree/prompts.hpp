#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace dualtree {

enum class PromptName {
  rewrite,
  entity_extract,
  proposition_extract,
  summarize,
  topic,
  qa_answer,
  hierarchy_label,
};

enum class ExpectedOutput { free_text, json_object };

struct PromptTemplate {
  PromptName name;
  std::string template_text;  // placeholders are written {{slot}}
  ExpectedOutput expected_output;
};

using PromptBindings = std::map<std::string, std::string>;

std::string_view to_string(PromptName name);
PromptName prompt_from_string(std::string_view s);

// The seven registered prompts, in enum order.
const std::vector<PromptTemplate>& prompt_registry();
const PromptTemplate& prompt(PromptName name);

std::vector<std::string> placeholders(const PromptTemplate& t);

// Substitutes every placeholder. Throws PreconditionError when a placeholder
// is unbound or a binding names no placeholder.
std::string render(const PromptTemplate& t, const PromptBindings& bindings);

// Inverse of render for well-formed prompts: recovers slot values by matching
// the literal text between placeholders. Throws ParseError on mismatch.
PromptBindings unrender(const PromptTemplate& t, std::string_view rendered);

// Digest over all templates; recorded in index manifests.
std::string prompt_registry_version();

}  // namespace dualtree
