#pragma once

#include "lro/llm_gateway.hpp"
#include "lro/plan.hpp"
#include "lro/prompt_kit.hpp"
#include "lro/relation.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace lro {

/// Difficulty annotations of a query; all but lro_count are on a 1..3 scale.
struct Annotations {
    int lro_count = 1;
    int table_count = 1;
    int hop_count = 1;
    int knowledge_level = 1;
};

struct QuerySpec {
    std::string id;
    std::string question;
    std::string plan;
    Relation ground_truth;
    Annotations annotations;
    /// Unset: derived from the plan.
    std::optional<bool> order_sensitive;
    /// Inline mock script (JSON text) used instead of the suite backend.
    std::optional<std::string> mock;
    /// Cutoff for HR@k and τ on single-LRO order queries.
    std::optional<std::size_t> k;
};

/// Reads a suite: a JSON array of specs, an object with a "queries" array, a
/// single spec object, or a directory of such files (sorted by name). Ground
/// truth file references resolve relative to the query file.
std::vector<QuerySpec> load_suite(const std::filesystem::path& path);
QuerySpec parse_query_spec(std::string_view json_text, const std::filesystem::path& base_dir = {});

struct BucketThresholds {
    int easy_max = 5;    // overall <= easy_max -> easy
    int medium_max = 8;  // overall <= medium_max -> medium, else hard
};

struct StratifiedScore {
    int lro = 0;
    int tables = 0;
    int hops = 0;
    int knowledge = 0;
    int overall = 0;
    /// "easy", "medium", "hard"; "single" for single-LRO specs, which are not stratified.
    std::string bucket;
};

/// 2 LROs score 1 and 3 LROs score 3; the other dimensions pass through.
StratifiedScore stratify(const Annotations& a, const BucketThresholds& t = {});

enum class Outcome { Pass, Fail, Error, Timeout };
const char* to_string(Outcome o) noexcept;

struct QueryResult {
    std::string id;
    StratifiedScore score;
    Outcome outcome = Outcome::Error;
    std::string error;
    std::size_t calls = 0;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    double cost = 0.0;
    std::optional<double> wall_ms;
    /// Operator-specific quality metrics for single-LRO specs, in a fixed order.
    std::vector<std::pair<std::string, double>> metrics;
    std::vector<std::string> warnings;
};

struct BucketSummary {
    std::string bucket;
    std::size_t total = 0;
    std::size_t passes = 0;
    double accuracy() const { return total ? double(passes) / double(total) : 0.0; }
};

struct Report {
    std::vector<QueryResult> queries;
    BucketThresholds thresholds;
    std::string model;
    std::string judge_model;
    std::map<std::string, double> cost_per_model;
    std::vector<std::string> unpriced_models;

    std::size_t total() const { return queries.size(); }
    std::size_t passes() const;
    double accuracy() const;
    /// Buckets in the order easy, medium, hard, single; empty buckets omitted.
    std::vector<BucketSummary> buckets() const;
    double total_cost() const;
};

struct SuiteOptions {
    PromptOptions prompt;
    BucketThresholds thresholds;
    PriceTable prices;
    /// Used for LLM-judge scoring of single-LRO impute specs when set.
    Gateway* judge = nullptr;
    /// Record wall time per query (makes reports run-dependent).
    bool timing = false;
    /// Run specs concurrently, each with its own ledger.
    bool concurrent = false;
};

/// Runs every spec on its own fork of `gateway`; failures never abort the suite.
Report run_suite(const std::vector<QuerySpec>& specs, const Database& db, Gateway& gateway,
                 const PromptTemplates& templates, const SuiteOptions& opts);

/// Writes report.json and queries.csv into `dir`.
void emit_report(const Report& report, const std::filesystem::path& dir);
std::string report_json(const Report& report);
std::string report_csv(const Report& report);
/// Human-readable summary: accuracy per bucket and total cost.
std::string report_summary(const Report& report);

/// "86.67%"
std::string format_percent(double fraction);

}  // namespace lro
