#pragma once

#include <string>
#include <string_view>

#include <json.hpp>

#include "dualtree/prompts.hpp"

namespace dualtree {

using ordered_json = nlohmann::ordered_json;

// Pulls the outermost JSON object out of model output, tolerating prose and
// code fences around it, raw newlines inside strings and trailing commas.
// For free_text the trimmed text comes back as a JSON string.
// Throws StructuredParseError (carrying `text`) when nothing parses.
ordered_json parse_structured(std::string_view text, ExpectedOutput schema = ExpectedOutput::json_object);

}  // namespace dualtree
