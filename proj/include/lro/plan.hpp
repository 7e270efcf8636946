#pragma once

#include "lro/llm_gateway.hpp"
#include "lro/operators.hpp"
#include "lro/prompt_kit.hpp"
#include "lro/relation.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace lro {

struct SourcePos {
    std::size_t line = 1;
    std::size_t column = 1;
    std::string to_string() const { return std::to_string(line) + ":" + std::to_string(column); }
};

enum class CompareOp { Eq, Ne, Lt, Le, Gt, Ge, IsNull, NotNull };
const char* to_string(CompareOp op) noexcept;

/// "*" scans the whole database (table-granularity operators).
struct ScanNode {
    std::string relation;
    friend bool operator==(const ScanNode&, const ScanNode&) = default;
};

struct ProjectNode {
    std::vector<std::string> columns;
    friend bool operator==(const ProjectNode&, const ProjectNode&) = default;
};

struct FilterNode {
    std::string column;
    CompareOp op = CompareOp::Eq;
    std::string literal;  // unused for IsNull / NotNull
    friend bool operator==(const FilterNode&, const FilterNode&) = default;
};

struct LroSelectNode {
    Granularity g = Granularity::Row;
    std::string requirement;
    std::optional<Variant> variant;
    friend bool operator==(const LroSelectNode&, const LroSelectNode&) = default;
};

/// Cell granularity joins on the key columns; row granularity concatenates
/// matched row pairs; column granularity yields (left_column, right_column).
struct LroMatchJoinNode {
    std::string other;
    Granularity g = Granularity::Cell;
    std::string left_key;
    std::string right_key;
    std::string requirement;
    std::optional<Variant> variant;
    friend bool operator==(const LroMatchJoinNode&, const LroMatchJoinNode&) = default;
};

struct LroImputeNode {
    Granularity g = Granularity::Column;
    std::string new_column;  // column granularity
    std::size_t rows = 0;    // row granularity
    std::string requirement;
    std::optional<Variant> variant;
    friend bool operator==(const LroImputeNode&, const LroImputeNode&) = default;
};

/// Row granularity appends a "cluster" label column; column and table
/// granularity yield (column|table, cluster).
struct LroClusterNode {
    Granularity g = Granularity::Row;
    std::string requirement;
    std::optional<Variant> variant;
    friend bool operator==(const LroClusterNode&, const LroClusterNode&) = default;
};

struct LroOrderNode {
    std::string requirement;
    std::optional<Variant> variant;
    friend bool operator==(const LroOrderNode&, const LroOrderNode&) = default;
};

struct OrderByNode {
    std::string column;
    bool descending = false;
    friend bool operator==(const OrderByNode&, const OrderByNode&) = default;
};

/// One row per distinct key, in first-appearance order, optionally with a
/// "count" column.
struct GroupByNode {
    std::vector<std::string> keys;
    bool with_count = false;
    friend bool operator==(const GroupByNode&, const GroupByNode&) = default;
};

struct LimitNode {
    std::size_t n = 0;
    friend bool operator==(const LimitNode&, const LimitNode&) = default;
};

using PlanNode = std::variant<ScanNode, ProjectNode, FilterNode, LroSelectNode, LroMatchJoinNode, LroImputeNode,
                              LroClusterNode, LroOrderNode, OrderByNode, GroupByNode, LimitNode>;

/// Short node name used in traces and errors, e.g. "LLM_SELECT(row)".
std::string node_label(const PlanNode& node);
bool is_lro_node(const PlanNode& node);

/// A pipeline: nodes[0] is the Scan, each later node consumes the previous
/// node's output. Source positions are kept for error messages only and do
/// not take part in equality.
struct Plan {
    std::vector<PlanNode> nodes;
    std::vector<SourcePos> positions;

    friend bool operator==(const Plan& a, const Plan& b) { return a.nodes == b.nodes; }
};

/// Parses either the standalone call form, e.g.
///   LLM_SELECT(Restaurants, 'column', 'It is related to ...');
/// or the SQL form, e.g.
///   SELECT Name FROM Restaurants WHERE LLM_SELECT('row', '...') ORDER BY LLM_ORDER('row', '...') LIMIT 1;
/// Throws Error(Parse) or Error(Usage) with a line:column position.
Plan parse_plan(std::string_view text);
/// Parses, then checks every relation and column against `db`.
Plan parse_plan(std::string_view text, const Database& db);

/// Throws Error(Domain) naming the first unresolved relation or column.
void validate_plan(const Plan& plan, const Database& db);

/// Canonical text; parse_plan(render_plan(p)) == p.
std::string render_plan(const Plan& plan);

/// True when the result's row order is part of the answer (an LLM order or
/// ORDER BY that is not followed by a grouping).
bool plan_is_order_sensitive(const Plan& plan);
std::size_t plan_lro_count(const Plan& plan);

struct NodeTrace {
    std::string node;
    std::string variant;  // resolved variant, empty for classical nodes
    std::size_t rows_in = 0;
    std::size_t rows_out = 0;
    std::size_t calls = 0;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
};

struct ExecResult {
    Relation result;
    UsageLedger ledger;
    std::vector<NodeTrace> trace;
    std::vector<std::string> warnings;
};

struct Engine {
    Engine(Gateway& gw, const PromptTemplates& tmpl, PromptOptions opts = {})
        : gateway(gw), templates(tmpl), options(opts) {}

    Gateway& gateway;
    const PromptTemplates& templates;
    PromptOptions options;
    bool allow_degrade = true;
};

/// Runs the pipeline. Omitted variants resolve to the best-practice variant.
/// A query deadline is started unless the gateway already has one.
ExecResult execute(const Plan& plan, const Database& db, Engine& engine);

/// Trace as JSON text.
std::string trace_to_json(const ExecResult& result);

}  // namespace lro
