#pragma once

#include "lro/llm_gateway.hpp"
#include "lro/prompt_kit.hpp"
#include "lro/relation.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace lro {

struct CanonOptions {
    bool case_fold = false;
};

/// Trimmed and, when requested, lower-cased. Null stays null.
std::string canonical(std::string_view text, const CanonOptions& opts = {});
Cell canonical_cell(const Cell& cell, const CanonOptions& opts = {});

struct SetMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Set precision/recall/F1. Elements are compared after canonicalization;
/// duplicates collapse. Empty vs empty is perfect, empty vs non-empty is 0.
SetMetrics prf(const std::vector<std::string>& pred, const std::vector<std::string>& truth,
               const CanonOptions& opts = {});

/// Fraction of positions with canonical equality. Lengths must agree.
double exact_match_ratio(const std::vector<Cell>& pred, const std::vector<Cell>& truth,
                         const CanonOptions& opts = {});

struct JudgeResult {
    double score = 1.0;
    std::size_t calls = 0;
    std::string judge_model;
};

/// Fraction of positions a second model deems semantically identical.
/// Canonically equal cells count as identical without a call. The judge
/// gateway must use a different model than `task_model`.
JudgeResult llm_judge_score(const std::vector<Cell>& pred, const std::vector<Cell>& truth, Gateway& judge,
                            const std::string& task_model, const PromptTemplates& templates,
                            const std::string& context = "the same attribute of the same record");

/// Cluster label of each element, indexed by element.
using Partition = std::vector<std::string>;

/// Adjusted Rand index (Hubert and Arabie). 1.0 when the expected index
/// already equals the maximum (e.g. both partitions trivial).
double ari(const Partition& pred, const Partition& truth);
/// Mutual information over the arithmetic mean of the two entropies; 1.0 when
/// both entropies are zero.
double nmi(const Partition& pred, const Partition& truth);

/// |top-k(pred) ∩ top-k(truth)| / k. `pred` must be a permutation of `truth`.
double hit_rate_at_k(const std::vector<std::string>& pred, const std::vector<std::string>& truth, std::size_t k);
/// Kendall τ over the rows that appear in both top-k lists; 1.0 with fewer than two hits.
double kendall_tau_on_hits(const std::vector<std::string>& pred, const std::vector<std::string>& truth,
                           std::size_t k);

/// Same column names and same rows (as a sequence when order matters, as a
/// multiset otherwise). Cells compare canonically.
bool table_exact_match(const Relation& pred, const Relation& truth, bool order_sensitive,
                       const CanonOptions& opts = {});

/// One string key per row, used to feed relations to the ranking metrics.
std::vector<std::string> row_keys(const Relation& r);

}  // namespace lro
