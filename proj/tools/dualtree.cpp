#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dualtree/errors.hpp"
#include "dualtree/pipeline.hpp"

namespace {

using nlohmann::ordered_json;

void emit(const ordered_json& j) {
  std::cout << j.dump(2) << std::endl;
}

int fail(const std::string& kind, const std::string& message, int code = 1) {
  emit(ordered_json{{"ok", false}, {"error", kind}, {"message", message}});
  return code;
}

void print_eval_table(const ordered_json& j) {
  const auto& a = j.at("aggregates");
  std::cerr << "questions  EM%     F1%     TPQ(s)\n"
            << a.at("questions").get<std::size_t>() << "          " << a.at("mean_em").get<double>() << "  "
            << a.at("mean_f1").get<double>() << "  " << a.at("mean_tpq").get<double>() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("dualtree"));
  spdlog::set_level(spdlog::level::warn);

  dualtree::RunConfig cfg;
  CLI::App app{"Dual-tree retrieval index: build, query, evaluate, coverage."};
  app.set_config("--config", "", "Key-value config file (TOML/INI)");
  app.fallthrough();
  app.require_subcommand(1);

  bool verbose = false;
  std::string cache_dir, out_path;
  long reduced_dim = 0, k_max = 0;
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");
  app.add_option("--corpus", cfg.corpus, "Corpus file (JSON Lines passages)");
  app.add_option("--qa", cfg.qa, "QA file (JSON Lines)");
  app.add_option("--clusters", cfg.clusters, "Question-cluster file for coverage");
  app.add_option("--index-dir", cfg.index_dir, "Index directory")->capture_default_str();
  app.add_option("--cache-dir", cache_dir, "Response cache directory (default <index-dir>/cache)");
  app.add_option("--out", out_path, "Output JSON path");
  app.add_option("--backend", cfg.backend, "Model backend")->check(CLI::IsMember({"live", "mock"}))->capture_default_str();
  app.add_option("--endpoint", cfg.http.base_url, "OpenAI-compatible base URL")->capture_default_str();
  app.add_option("--api-key", cfg.http.api_key, "API key")->envname("DUALTREE_API_KEY");
  app.add_option("--chat-model", cfg.gateway.chat_model)->capture_default_str();
  app.add_option("--embedding-model", cfg.gateway.embedding_model)->capture_default_str();
  app.add_option("--concurrency", cfg.gateway.concurrency, "In-flight model requests")->capture_default_str();
  app.add_option("--workers", cfg.workers, "Worker threads per stage")->capture_default_str();
  app.add_option("--seed", cfg.seed, "Base clustering seed")->capture_default_str();
  app.add_option("--chunk-tokens", cfg.chunk_tokens)->capture_default_str();
  app.add_option("--max-levels", cfg.max_levels, "Tree level cap including leaves")->capture_default_str();
  app.add_option("--threshold", cfg.threshold, "Soft-membership threshold")->capture_default_str();
  app.add_option("--reduced-dim", reduced_dim, "Dimension after reduction (0 = automatic)");
  app.add_option("--k-max", k_max, "Largest component count tried (0 = automatic)");
  app.add_option("--summary-tokens", cfg.summary_token_budget)->capture_default_str();
  app.add_option("--aggregate-tokens", cfg.aggregate_token_budget)->capture_default_str();
  app.add_option("--pool-flags", cfg.pool_flags, "default, A, B, C, D, sim_only or a comma list of origins")
      ->capture_default_str();
  app.add_option("--retriever", cfg.retriever)->check(CLI::IsMember({"dense", "bm25"}))->capture_default_str();
  app.add_option("--top-k", cfg.top_k)->check(CLI::PositiveNumber)->capture_default_str();

  auto* build = app.add_subcommand("build", "Extract, aggregate, build both trees and the pool");
  std::string query_text;
  auto* query = app.add_subcommand("query", "Retrieve top-k pool entries for a query");
  query->add_option("text", query_text, "Query")->required();
  std::string label;
  auto* evaluate = app.add_subcommand("evaluate", "Answer the QA set and score EM/F1/TPQ");
  evaluate->add_option("--label", label, "Report label");
  auto* coverage = app.add_subcommand("coverage", "Pairwise coverage of the two clustering philosophies");
  std::string report_a, report_b;
  auto* compare = app.add_subcommand("compare", "TPER of report A relative to report B");
  compare->add_option("report_a", report_a)->required();
  compare->add_option("report_b", report_b)->required();
  auto* stats = app.add_subcommand("stats", "Extraction statistics of a built index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  if (verbose) spdlog::set_level(spdlog::level::info);
  if (cfg.http.api_key.empty())
    if (const char* k = std::getenv("OPENAI_API_KEY")) cfg.http.api_key = k;
  if (!cache_dir.empty()) cfg.cache_dir = cache_dir;
  if (!out_path.empty()) cfg.out = out_path;
  if (reduced_dim > 0) cfg.reduced_dim = reduced_dim;
  if (k_max > 0) cfg.k_max = k_max;

  try {
    ordered_json out;
    if (*build) {
      out = dualtree::cmd_build(cfg);
    } else if (*query) {
      out = dualtree::cmd_query(cfg, query_text);
    } else if (*evaluate) {
      out = dualtree::cmd_evaluate(cfg, label);
      print_eval_table(out);
    } else if (*coverage) {
      out = dualtree::cmd_coverage(cfg);
    } else if (*compare) {
      out = dualtree::cmd_compare(report_a, report_b);
    } else if (*stats) {
      out = dualtree::cmd_stats(cfg.index_dir);
    }
    out["ok"] = true;
    emit(out);
    return 0;
  } catch (const dualtree::StageError& e) {
    emit(ordered_json{{"ok", false}, {"error", "stage"}, {"stage", e.stage()}, {"message", e.what()}});
    return 1;
  } catch (const dualtree::ConfigError& e) {
    return fail("config", e.what());
  } catch (const dualtree::ParseError& e) {
    return fail("parse", e.what());
  } catch (const dualtree::ValidationError& e) {
    return fail("validation", e.what());
  } catch (const dualtree::Error& e) {
    return fail("error", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
}
