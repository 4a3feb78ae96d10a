#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualtree/corpus.hpp"
#include "dualtree/gateway.hpp"
#include "dualtree/pool.hpp"

namespace dualtree {

// Lowercase, drop punctuation, drop the articles a/an/the, collapse whitespace.
std::string normalize_answer(std::string_view s);

struct EmF1 {
  int em = 0;
  double f1 = 0.0;
};

// Max over golds. Throws PreconditionError when `golds` is empty.
EmF1 score_em_f1(std::string_view prediction, const std::vector<std::string>& golds);

struct Answer {
  std::string prediction;
  double tpq_seconds = 0.0;
  bool timing_valid = true;  // false when a cached call had no recorded latency
  std::vector<std::string> retrieved_ids;
  std::string context;
};

std::string assemble_context(const RetrievalPool& pool, const std::vector<Hit>& hits);

// Retrieve, build the context and ask the QA prompt. Cache hits are charged
// their recorded live latency instead of the lookup time.
Answer answer_question(Gateway& gw, const RetrievalPool& pool, const QAItem& q, const PoolConfig& cfg);

struct EvalRecord {
  std::string question_id;
  std::string prediction;
  int em = 0;
  double f1 = 0.0;
  double tpq_seconds = 0.0;
  bool timing_valid = true;
  std::vector<std::string> retrieved_ids;
  std::optional<std::string> error;
};

struct EvalReport {
  std::string label;
  std::vector<EvalRecord> records;
  std::size_t pool_size = 0;
  double mean_em = 0.0;   // percent
  double mean_f1 = 0.0;   // percent
  double mean_tpq = 0.0;  // over error-free records
  double total_tpq = 0.0;
  bool timing_valid = true;

  void recompute();
  nlohmann::ordered_json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

struct EvalOptions {
  std::size_t workers = 1;  // >1 trades timing validity for throughput
};

EvalReport evaluate(Gateway& gw, const RetrievalPool& pool, const std::vector<QAItem>& items, const PoolConfig& cfg,
                    const EvalOptions& opts = {});

EvalReport load_report(const std::filesystem::path& file);
void save_report(const std::filesystem::path& file, const EvalReport& report);

struct EfficiencyComparison {
  std::string method_a;
  std::string method_b;
  double time_a = 0.0;
  double time_b = 0.0;
  std::size_t pool_a = 0;
  std::size_t pool_b = 0;
  double tper = 0.0;

  nlohmann::ordered_json to_json() const;
};

// (time_a / time_b) / (pool_a / pool_b).
double tper(double time_a, double time_b, double pool_a, double pool_b);

// Throws ValidationError when the reports cover different question sets.
EfficiencyComparison compute_tper(const EvalReport& a, const EvalReport& b);

}  // namespace dualtree
