#pragma once

#include "lro/llm_gateway.hpp"
#include "lro/prompt_kit.hpp"
#include "lro/relation.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lro {

enum class LroKind { Select, Match, Impute, Cluster, Order };

const char* to_string(LroKind kind) noexcept;
std::optional<LroKind> parse_lro_kind(std::string_view text);

/// Implementation variant. BATCH(b) sits between ONE (b = 1) and ALL (b >= n).
struct Variant {
    enum class Kind { All, One, Semi, Pair, Sort, Score, Batch };

    Kind kind = Kind::All;
    std::size_t batch = 0;  // only for Batch

    static Variant all() { return {Kind::All, 0}; }
    static Variant one() { return {Kind::One, 0}; }
    static Variant semi() { return {Kind::Semi, 0}; }
    static Variant pair() { return {Kind::Pair, 0}; }
    static Variant sort() { return {Kind::Sort, 0}; }
    static Variant score() { return {Kind::Score, 0}; }
    static Variant batched(std::size_t b) { return {Kind::Batch, b}; }

    std::string to_string() const;
    friend bool operator==(const Variant&, const Variant&) = default;
};

/// Accepts ALL, ONE, SEMI, PAIR, SORT, SCORE, BATCH(b), optionally prefixed
/// with "LLM-", case-insensitive.
std::optional<Variant> parse_variant(std::string_view text);

/// True for the populated (operator, granularity) cells of the taxonomy.
bool is_supported(LroKind kind, Granularity g);
bool is_variant_allowed(LroKind kind, Granularity g, const Variant& v);
/// Throws Error(Usage) naming the offending combination.
void require_supported(LroKind kind, Granularity g, const Variant& v);

/// Recommended variant per (operator, granularity).
Variant best_practice_variant(LroKind kind, Granularity g);

/// Natural-language requirement l. Never empty.
class Requirement {
public:
    explicit Requirement(std::string text);
    const std::string& text() const noexcept { return text_; }

private:
    std::string text_;
};

/// Everything an operator needs to talk to the model. Warnings (repairs,
/// degradations) are appended to `events` in the order they happen.
struct OperatorContext {
    OperatorContext(Gateway& gw, const PromptTemplates& tmpl, PromptOptions opts = {})
        : gateway(gw), templates(tmpl), options(opts) {}

    Gateway& gateway;
    const PromptTemplates& templates;
    PromptOptions options;
    /// Let Select/Impute ALL fall back to the largest BATCH(b) that fits the context.
    bool allow_degrade = true;
    std::vector<std::string> events;
};

// ---------------------------------------------------------------------------
// Select

/// Per-element verdicts; the shared core of every Select variant.
std::vector<bool> select_mask(OperatorContext& ctx, const std::vector<Element>& elements, const RenderContext& render,
                              const Requirement& l, const Variant& v);

/// Row -> filtered relation, Column -> projected relation.
Relation lro_select(OperatorContext& ctx, const Relation& r, Granularity g, const Requirement& l, const Variant& v);
/// Table granularity over a database -> sub-database.
Database lro_select(OperatorContext& ctx, const Database& db, const Requirement& l, const Variant& v);

// ---------------------------------------------------------------------------
// Match

struct MatchKeys {
    std::string left;
    std::string right;
};

/// Pairs of element ids (indices into extract_elements order; for cell
/// granularity, row indices of the key columns), sorted and unique.
struct MatchResult {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    friend bool operator==(const MatchResult&, const MatchResult&) = default;
};

/// Cell granularity requires `keys`.
MatchResult lro_match(OperatorContext& ctx, const Relation& left, const Relation& right, Granularity g,
                      const Requirement& l, const Variant& v, const std::optional<MatchKeys>& keys = std::nullopt);

/// Joins on the matched key-value pairs: every left row whose key equals a
/// matched left value is paired with every right row whose key equals the
/// matched right value. Right columns that collide are renamed "<right>.<col>".
Relation materialize_join(const Relation& left, const Relation& right, const MatchKeys& keys, const MatchResult& m);

// ---------------------------------------------------------------------------
// Impute

struct ImputeSpec {
    std::string new_column;  // column granularity
    std::size_t rows = 0;    // row granularity: how many rows to generate
};

Relation lro_impute(OperatorContext& ctx, const Relation& r, Granularity g, const Requirement& l, const Variant& v,
                    const ImputeSpec& spec = {});

// ---------------------------------------------------------------------------
// Cluster

struct Cluster {
    std::string label;
    std::vector<std::size_t> members;  // element ids, ascending
    friend bool operator==(const Cluster&, const Cluster&) = default;
};

struct ClusterResult {
    std::vector<Cluster> clusters;
    std::size_t element_count = 0;
    std::vector<std::string> warnings;

    std::size_t k() const noexcept { return clusters.size(); }
    /// Label of each element's cluster, by element id.
    std::vector<std::string> labels() const;
    /// Disjoint, covering, no empty cluster.
    bool is_partition() const;
};

/// Turns a raw assignment into a valid partition of `n` elements: a repeated
/// element stays in its first cluster, each omitted element gets a fresh
/// singleton cluster, empty clusters are dropped, labels are made unique.
ClusterResult repair_partition(std::size_t n, std::vector<ParsedCluster> raw);

ClusterResult lro_cluster(OperatorContext& ctx, const Relation& r, Granularity g, const Requirement& l,
                          const Variant& v);
ClusterResult lro_cluster(OperatorContext& ctx, const Database& db, const Requirement& l, const Variant& v);

// ---------------------------------------------------------------------------
// Order

/// Row permutation, best first: output position i holds input row perm[i].
std::vector<std::size_t> order_permutation(OperatorContext& ctx, const Relation& r, const Requirement& l,
                                           const Variant& v);
Relation lro_order(OperatorContext& ctx, const Relation& r, const Requirement& l, const Variant& v);

}  // namespace lro
