#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "dualtree/extraction.hpp"

namespace dualtree {

// All propositions sharing one entity key, as a pseudo-document.
struct PropositionAggregate {
  std::string agg_id;
  std::string entity_key;
  std::vector<std::string> prop_ids;
  std::string text;
  std::vector<std::string> member_doc_ids;  // sorted, unique
};

struct AggregationOptions {
  std::size_t token_budget = 2048;  // longer aggregates are split into parts
};

// Groups propositions by entity key. Members are ordered by (doc_id,
// seq_in_doc) so the result does not depend on input order; a proposition with
// k keys lands in k aggregates. Output is sorted by entity key.
// Throws PreconditionError if a proposition has no entity keys.
std::vector<PropositionAggregate> build_aggregates(const std::vector<Proposition>& props,
                                                   const AggregationOptions& opts = {});

struct AggregateStats {
  std::size_t aggregates = 0;
  std::size_t entities = 0;
  double avg_props_per_entity = 0.0;
  std::size_t max_props_per_entity = 0;
  std::size_t min_props_per_entity = 0;
};

AggregateStats aggregate_stats(const std::vector<PropositionAggregate>& aggs);

void save_aggregates(const std::filesystem::path& file, const std::vector<PropositionAggregate>& aggs);
std::vector<PropositionAggregate> load_aggregates(const std::filesystem::path& file);

}  // namespace dualtree
