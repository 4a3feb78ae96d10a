#include "dualtree/prompts.hpp"

#include <set>

#include "dualtree/errors.hpp"
#include "dualtree/text.hpp"

namespace dualtree {
namespace {

constexpr std::string_view kRewriteInstruction =
    R"PROMPT(Instruction:
Rewrite the below paragraph by resolving all entity coreferences with the preceding paragraph from document.
- Resolve all inter-sentence pronoun references.
- Make sure that all pronouns in a sentence refers to some named entity with in the same sentence.
- Explicitly mention entity names wherever necessary to remove ambiguity from a sentence. Remember to make each sentence clear and unambiguous.
- For each entity, use only the one most informative name.
- Do not generate anything except the rewritten paragraph.
)PROMPT";

std::string rewrite_template() {
  std::string t;
  t += "Previous paragraph from Document:\n";
  t += R"PROMPT(Gualala, the isolated Mendocino Coast town with a name that leaves most visitors tongue-tied, is on a new list of the 50 best places to live in the United States. Men's Journal magazine describes Gualala as an "outpost of adventure lifestyle" in its latest edition, which goes on sale today. The magazine describes Gualala (pronounced wa-LA-la by locals) as one of the "below-the-radar places to a make a move on before the word gets out." There were five such cities. The others were Homer, Alaska; Newport, Vt.; Logan, Utah; and Walla Walla, Wash. Rolling Stone magazine's Jann Wenner publishes Men's Journal, which has a paid circulation of about 620,000. Gualala joined three other California communities on the magazine's list: Santa Cruz, Mammoth Lakes and Bishop. "We were looking for places that combined affordability, proximity to outdoor adventure and a generally undiscovered quality of life," said Erica Kestenbaum, a spokeswoman for Men's Journal.
)PROMPT";
  t += kRewriteInstruction;
  t += "Paragraph:\n";
  t += R"PROMPT(She said isolation played a factor. "In Northern California, it's particularly difficult to find a beautiful coastal setting that isn't entirely overrun," she said. Gualala residents Monday were largely unaware of the magazine listing or the attention it could bring to the old logging town turned tourist center. A few coastal residents chuckled about any notion of affordability, given an influx of newcomers who've driven the median housing price to $580,000 compared to the median family income of $47,778. Others recalled an era when the Gualala region was better known for the logging of ancient redwoods, marijuana growing and boisterous beer drinking at the historic Gualala Hotel. Still there was a certain pride to the magazine's designation. Yvette White, a 25-year resident who works at the Gualala Sport; Tackle shop, said she's proud her town made it on the list.
)PROMPT";
  t += "Output:\n";
  t += R"PROMPT(Erica Kestenbaum said isolation played a factor. "In Northern California, it's particularly difficult to find a beautiful coastal setting that isn't entirely overrun," Erica Kestenbaum said. Gualala residents Monday were largely unaware of the Men's Journal magazine listing or the attention it could bring to the old logging town turned tourist center. A few coastal residents of Gualala chuckled about any notion of affordability, given an influx of newcomers who've driven the Gualala's median housing price to $580,000 compared to the median family income of $47,778. Other Gualala residents recalled an era when the Gualala region was better known for the logging of ancient redwoods, marijuana growing and boisterous beer drinking at the historic Gualala Hotel. Still there was a certain pride to the Men's Journal magazine's designation. Yvette White, a 25-year Gualala resident who works at the Gualala Sport; Tackle shop, said she's proud her town made it on the list.
)PROMPT";
  t += "Previous paragraph from Document: {{previous_paragraph}}\n";
  t += kRewriteInstruction;
  t += "Paragraph: {{paragraph}}\n";
  t += "Output:\n";
  return t;
}

std::string entity_template() {
  return R"PROMPT(Extract all named entities from the document. Also generate the type for each entity.

Instructions

- Generate only the most informative name for each named entity. Example: if John P., Parker, John Parker are coreferential, only generate John Parker.
- Use your best understanding best on the domain of paragraph to decide appropriate entity types.
- Respond using json format provided below.

{
    "n1":{"name": "entity_name", "type": "entity_type_label"},
    "n2":{},
}

Below is an example for reference.
Paragraph: Tucked into Eli Lilly's year-end earnings report, the company revealed positive results from Synergy-NASH—its phase 2 study of tirzepatide in adults in nonalcoholic steatohepatitis (NASH), also known as metabolic dysfunction-associated steatohepatitis (MASH).
Output:

{
    "n1": {"name": "Eli Lilly", "type": "Organization"},
    "n2": {"name": "Synergy-NASH", "type": "Clinical Trial"},
    "n4": {"name": "tirzepatide", "type": "Drug"},
    "n5": {"name": "nonalcoholic steatohepatitis", "type": "Disease"},
    "n6": {"name": "metabolic dysfunction-associated steatohepatitis", "type": "Disease"},
    "n7": {"name": "year-end earnings report", "type": "Document"}
}

Paragraph: {{paragraph}}
Output:
)PROMPT";
}

std::string proposition_template() {
  return R"PROMPT(Extract all facts from the document. For each fact, also generate all semantic triplets.
Instructions
- Consistently use the most informative name for each named entity in all facts and triplets.
- Avoid pronouns or ambiguous references in facts and triplets. Instead, directly include all relevant named entities in facts.
- Ensure that each semantic triplet contains head entity, predicate, and tail entity.
- Ensure that at least one (preferably both) entity in each semantic triplet is present in the given entities list.
- Respond using json format provided below:
{
    "f1":{
        "fact": "A factual statement describing important information (preferably about some entities) from the paragraph",
        "triplets": [["entity 1", "predicate", "entity 2"], ["entity 1", "predicate", "entity 3"]]
    },
    "f2":{},
}

Below is an example for reference.
Paragraph: Locked in a heated battle with Novo Nordisk's semaglutide franchise, Eli Lilly's tirzepatide is beginning to come into its own—both with regards to sales and amid attempts to show the dual GIP/GLP-1 agonist can strike out beyond diabetes and obesity. As Mounjaro, tirzepatide won its first FDA nod in Type 2 diabetes back in May 2022. An obesity approval followed last November, with that formulation of tirzepatide adopting the commercial moniker Zepbound. In 2023's fourth quarter, Mounjaro generated a whopping $2.2 billion in sales, a nearly eight-fold increase over the $279 million it pulled down during the same stretch in 2022. Year-to-date, the drug brought home around $5.2 billion in revenues, Lilly said in an earnings release Tuesday. Zepbound, for its part, generated $175.8 million during its first quarter on the market. Overall, Lilly reeled in around $9.4 billion in fourth-quarter sales, growing 28% over the $7.3 billion it made for the quarter in 2022.
Entities: Eli Lilly, Novo Nordisk, Tirzepatide, Semaglutide, GLP-1, GIP, FDA, Mounjaro, Zepbound
Output:
{
    "f1": {
        "fact": "Eli Lilly's tirzepatide is competing with Novo Nordisk's semaglutide franchise.",
        "triplets": [["Eli Lilly", "competing with", "Novo Nordisk"], ["Tirzepatide", "is competing with", "Semaglutide"]]
    },
    "f2": {
        "fact": "Eli Lilly is trying to show tirzepatide, the dual GIP/GLP-1 agonist, can strike out beyond diabetes and obesity.",
        "triplets": [["Eli Lilly", "is trying to show", "Tirzepatide"], ["Tirzepatide", "is a", "dual GIP/GLP-1 agonist"],
                     ["Tirzepatide", "can treat beyond", "Diabetes"], ["Tirzepatide", "can treat beyond", "Obesity"]]
    },
    "f3": {
        "fact": "Tirzepatide, under the brand name Mounjaro, received its first FDA approval for Type 2 diabetes in May 2022.",
        "triplets": [["Tirzepatide", "branded as", "Mounjaro"], ["Mounjaro", "won", "FDA approval"],
                     ["FDA approval", "for",  "Type 2 diabetes"], ["FDA approval", "was in", "May 2022"]]
    },
    "f4": {
        "fact": "Tirzepatide, under the brand name Zepbound, received an obesity approval in November 2022.",
        "triplets": [["Tirzepatide", "was branded as", "Zepbound"], ["Zepbound", "received", "Obesity approval"],
                     ["Obesity approval", "was in", "November 2022"]]
    },
    "f5": {
        "fact": "Mounjaro generated $2.2 billion in sales in the fourth quarter of 2023, an eight-fold increase from the $279 million during the same period in 2022.",
        "triplets": [["Mounjaro", "2023's fourth quarter sales", "$2.2 billion sales"],
        ["Mounjaro", "2022's fourth quarter sales", "$279 million"]]
    },
    "f6": {
        "fact": "Mounjaro brought in around $5.2 billion in revenues year-to-date in 2023, Lilly said in an earnings release Tuesday",
        "triplets": [["Mounjaro", "2023 sales year-to-date", "$5.2 billion revenues"]]
    },
    "f7": {
        "fact": "Zepbound generated $175.8 million in sales in its first quarter on the market.",
        "triplets": [["Zepbound", "first quarter sales", "$175.8 million"]]
    },
    "f8": {
        "fact": "Eli Lilly's fourth-quarter sales were around $9.4 billion, a 28% increase from the $7.3 billion during the same period in 2022.",
        "triplets": [["Eli Lilly", "2023 fourth-quarter sales", "$9.4 billion,"],
        ["Eli Lilly", "2022 fourth-quarter sales", "$7.3 billion,"]]
    }
}

Paragraph: {{paragraph}}
Entities: {{entities}}
Output:
)PROMPT";
}

std::vector<PromptTemplate> build_registry() {
  std::vector<PromptTemplate> r;
  r.push_back({PromptName::rewrite, rewrite_template(), ExpectedOutput::free_text});
  r.push_back({PromptName::entity_extract, entity_template(), ExpectedOutput::json_object});
  r.push_back({PromptName::proposition_extract, proposition_template(), ExpectedOutput::json_object});
  r.push_back({PromptName::summarize,
               "Summarize the provided text, including as many key details as needed.\n\n"
               "Text:\n{{text}}\n\nSummary:\n",
               ExpectedOutput::free_text});
  r.push_back({PromptName::topic,
               "Identify the high-level topic of this paragraph as concise as possible.\n\n"
               "Paragraph: {{paragraph}}\nTopic:\n",
               ExpectedOutput::free_text});
  r.push_back({PromptName::qa_answer,
               "Context:\n{{context}}\n\nQuestion: {{question}}\n"
               "Answer this question in as fewer number of words as possible.\nAnswer:\n",
               ExpectedOutput::free_text});
  r.push_back({PromptName::hierarchy_label,
               "Decide the abstractiveness of the text chunk below.\n"
               "- Answer \"low\" if the chunk describes fine-grained details about a topic.\n"
               "- Answer \"high\" if the chunk gives an overview of a topic and summarizes fine-grained details.\n"
               "Respond with a single word: low or high.\n\n"
               "Chunk: {{paragraph}}\nLabel:\n",
               ExpectedOutput::free_text});
  return r;
}

struct Piece {
  bool is_slot;
  std::string value;  // literal text or slot name
};

std::vector<Piece> split_template(const std::string& t) {
  std::vector<Piece> out;
  std::size_t pos = 0;
  while (true) {
    const auto open = t.find("{{", pos);
    if (open == std::string::npos) break;
    const auto close = t.find("}}", open + 2);
    if (close == std::string::npos) break;
    out.push_back({false, t.substr(pos, open - pos)});
    out.push_back({true, t.substr(open + 2, close - open - 2)});
    pos = close + 2;
  }
  out.push_back({false, t.substr(pos)});
  return out;
}

}  // namespace

std::string_view to_string(PromptName name) {
  switch (name) {
    case PromptName::rewrite: return "rewrite";
    case PromptName::entity_extract: return "entity_extract";
    case PromptName::proposition_extract: return "proposition_extract";
    case PromptName::summarize: return "summarize";
    case PromptName::topic: return "topic";
    case PromptName::qa_answer: return "qa_answer";
    case PromptName::hierarchy_label: return "hierarchy_label";
  }
  return "unknown";
}

PromptName prompt_from_string(std::string_view s) {
  for (const auto& p : prompt_registry())
    if (to_string(p.name) == s) return p.name;
  throw ParseError("unknown prompt '" + std::string(s) + "'");
}

const std::vector<PromptTemplate>& prompt_registry() {
  static const std::vector<PromptTemplate> kRegistry = build_registry();
  return kRegistry;
}

const PromptTemplate& prompt(PromptName name) {
  return prompt_registry().at(static_cast<std::size_t>(name));
}

std::vector<std::string> placeholders(const PromptTemplate& t) {
  std::vector<std::string> out;
  for (const auto& p : split_template(t.template_text))
    if (p.is_slot) out.push_back(p.value);
  return out;
}

std::string render(const PromptTemplate& t, const PromptBindings& bindings) {
  std::set<std::string> used;
  std::string out;
  for (const auto& p : split_template(t.template_text)) {
    if (!p.is_slot) {
      out += p.value;
      continue;
    }
    const auto it = bindings.find(p.value);
    if (it == bindings.end())
      throw PreconditionError("prompt '" + std::string(to_string(t.name)) + "': unbound placeholder '" +
                              p.value + "'");
    out += it->second;
    used.insert(p.value);
  }
  for (const auto& [k, v] : bindings)
    if (used.count(k) == 0)
      throw PreconditionError("prompt '" + std::string(to_string(t.name)) + "': no placeholder '" + k + "'");
  return out;
}

PromptBindings unrender(const PromptTemplate& t, std::string_view rendered) {
  const auto pieces = split_template(t.template_text);
  PromptBindings out;
  // pieces alternate literal, slot, literal, ..., literal
  const std::string& head = pieces.front().value;
  const std::string& tail = pieces.back().value;
  if (rendered.substr(0, head.size()) != head || rendered.size() < head.size() + tail.size() ||
      rendered.substr(rendered.size() - tail.size()) != tail)
    throw ParseError("rendered text does not match prompt '" + std::string(to_string(t.name)) + "'");
  std::size_t pos = head.size();
  const std::size_t limit = rendered.size() - tail.size();
  for (std::size_t i = 1; i + 1 < pieces.size(); i += 2) {
    const std::string& slot = pieces[i].value;
    if (i + 1 == pieces.size() - 1) {
      out[slot] = std::string(rendered.substr(pos, limit - pos));
      pos = limit;
      continue;
    }
    const std::string& lit = pieces[i + 1].value;
    const std::size_t end = rendered.find(lit, pos);
    if (end == std::string_view::npos || end > limit)
      throw ParseError("rendered text does not match prompt '" + std::string(to_string(t.name)) + "'");
    out[slot] = std::string(rendered.substr(pos, end - pos));
    pos = end + lit.size();
  }
  return out;
}

std::string prompt_registry_version() {
  std::string all;
  for (const auto& p : prompt_registry()) {
    all += to_string(p.name);
    all += '\0';
    all += p.template_text;
    all += '\0';
  }
  return sha256_hex(all).substr(0, 16);
}

}  // namespace dualtree
