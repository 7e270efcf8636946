#pragma once

#include "lro/llm_gateway.hpp"
#include "lro/relation.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace lro {

/// Prompting options: chain-of-thought (CoT) and data examples (EX).
struct PromptOptions {
    bool cot = false;
    bool examples = false;
    std::size_t example_count = 3;

    void validate() const;
};

/// Where an element came from: the relation supplies column names for rows,
/// the database supplies schemas and sample tuples for tables.
struct RenderContext {
    const Relation* relation = nullptr;
    const Database* database = nullptr;
};

/// Renders one element for inclusion in a prompt.
///
///   row    -> "col: value; col: value"
///   column -> "Name" or, with EX, `Name (examples: "a", "b", "c")`
///   table  -> "Name(col, col)" or, with EX, the same plus sample tuples
///   cell   -> the cell text
///
/// Null cells render as NULL. Output is a pure function of the inputs.
std::string render_element(const Element& e, const PromptOptions& opts, const RenderContext& ctx = {});

/// Every prompt the operators can issue. Each maps to one template file.
enum class PromptShape {
    SelectAll,        // numbered candidates -> {"selected": [i...]}
    SelectOne,        // one candidate -> {"keep": bool}
    MatchAll,         // left and right lists -> {"pairs": [[l, r]...]}
    MatchOne,         // one pair -> {"match": bool}
    MatchSemi,        // one left, numbered right -> {"matches": [r...]}
    ImputeCellAll,    // rows + numbered missing cells -> {"values": [...]}
    ImputeCellOne,    // one row + one missing cell -> {"value": "..."}
    ImputeColumnAll,  // numbered rows -> {"values": [...]}
    ImputeColumnOne,  // one row -> {"value": "..."}
    ImputeRowOne,     // schema + existing rows -> {"row": {...}}
    ClusterAll,       // numbered elements -> {"clusters": [{"label", "members"}...]}
    ClusterOne,       // existing clusters + element -> {"cluster": "label"}
    OrderAll,         // numbered rows -> {"ranking": [i...]}
    OrderCompare,     // rows [0] and [1] -> {"first_better": bool}
    OrderScore,       // one row -> {"score": 0..100}
    Judge,            // two strings -> {"same": bool}
};

const char* template_name(PromptShape shape) noexcept;

/// Versioned prompt templates with {{placeholder}} slots. The built-in set is
/// also shipped as text files under templates/v1; a directory may override
/// any subset of them.
class PromptTemplates {
public:
    static PromptTemplates builtin();
    /// Files named <template_name>.txt (and system.txt) replace built-ins.
    static PromptTemplates load(const std::filesystem::path& dir);

    const std::string& system() const noexcept { return system_; }
    const std::string& get(PromptShape shape) const;
    const std::string& version() const noexcept { return version_; }

    /// Writes the full set as files into `dir`.
    void save(const std::filesystem::path& dir) const;

private:
    std::string version_;
    std::string system_;
    std::map<std::string, std::string, std::less<>> templates_;
};

/// Fills {{name}} slots. Unknown placeholders raise Error(Usage).
std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& values);

/// Already-rendered prompt content. Which fields are required depends on the shape.
struct PromptPayload {
    std::vector<std::string> candidates;  // numbered [0], [1], ... in the prompt
    std::vector<std::string> right;       // MatchAll right-hand list / MatchSemi options
    std::string element;                  // single candidate (ONE-style shapes, left of SEMI)
    std::string second;                   // MatchOne right element, OrderCompare second row, Judge truth
    std::string context;                  // rows for impute, clusters for ClusterOne, schema for ImputeRowOne
    std::string column;                   // target column name for impute shapes
};

/// Builds the chat request for a shape. Throws Error(Usage) when the payload
/// does not fit the shape and Error(ContextOverflow) when the rendered prompt
/// exceeds `context_budget` tokens (0 disables the check).
ChatRequest build_prompt(const PromptTemplates& templates, PromptShape shape, const PromptPayload& payload,
                         std::string_view requirement, const PromptOptions& opts, RequestTag tag,
                         std::size_t context_budget = 0);

// ---------------------------------------------------------------------------
// Parsed completions. Each keeps the raw completion for tracing.

struct ParsedVerdict {
    bool value = false;
    std::string raw;
};

struct ParsedIndexList {
    std::vector<std::size_t> indices;  // sorted, unique
    std::string raw;
};

struct ParsedPairList {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // unique, first-seen order
    std::string raw;
};

struct ParsedCluster {
    std::string label;
    std::vector<std::size_t> members;
};

struct ParsedAssignment {
    std::vector<ParsedCluster> clusters;
    /// Every prompted element assigned exactly once.
    bool complete = false;
    std::string raw;
};

struct ParsedRanking {
    std::vector<std::size_t> order;  // duplicates dropped
    /// False when some candidates are missing or were listed twice.
    bool complete = false;
    std::string raw;
};

struct ParsedScore {
    double score = 0.0;
    std::string raw;
};

struct ParsedCells {
    std::vector<Cell> values;
    std::string raw;
};

/// What the parser should expect. `count` is the number of prompted
/// candidates (index bounds, value count); `right_count` bounds the right
/// side of pairs; `columns` names the fields of a generated row.
struct ExpectedShape {
    PromptShape shape = PromptShape::SelectOne;
    std::size_t count = 1;
    std::size_t right_count = 0;
    std::vector<std::string> columns;
};

using ParsedValue = std::variant<ParsedVerdict, ParsedIndexList, ParsedPairList, ParsedAssignment, ParsedRanking,
                                 ParsedScore, ParsedCells>;

/// Extracts the last JSON value in the completion (any reasoning before it is
/// ignored) and validates it. Throws Error(MalformedOutput) on any violation.
ParsedValue parse_completion(const ExpectedShape& expected, std::string_view completion);

/// Text of the last well-formed JSON object or array in `text`, if any.
std::optional<std::string> last_json_value(std::string_view text);

/// Canonical JSON completions for each payload; parse_completion inverts these.
std::string serialize_verdict(PromptShape shape, bool value);
std::string serialize_indices(PromptShape shape, const std::vector<std::size_t>& indices);
std::string serialize_pairs(const std::vector<std::pair<std::size_t, std::size_t>>& pairs);
std::string serialize_assignment(const std::vector<ParsedCluster>& clusters);
std::string serialize_cluster_choice(std::string_view label);
std::string serialize_ranking(const std::vector<std::size_t>& order);
std::string serialize_score(double score);
std::string serialize_cells(PromptShape shape, const std::vector<Cell>& values, const std::vector<std::string>& columns = {});

/// Suffix appended to a request when its first completion was malformed.
inline constexpr std::string_view kFormatReminder =
    "\n\nYour previous answer could not be parsed. Reply again and end with exactly one JSON value in the "
    "required output format.";

}  // namespace lro
