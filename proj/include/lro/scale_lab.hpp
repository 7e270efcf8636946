#pragma once

#include "lro/llm_gateway.hpp"
#include "lro/operators.hpp"
#include "lro/prompt_kit.hpp"
#include "lro/relation.hpp"

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lro {

enum class SweepTask { SelectRow, ImputeColumn };

const char* to_string(SweepTask t) noexcept;
std::optional<SweepTask> parse_sweep_task(std::string_view text);

/// Strictly after 1989-11-09. nullopt for anything that is not a valid YYYY-MM-DD date.
std::optional<bool> born_after_wall(std::string_view date);

/// Tropical zodiac sign of a YYYY-MM-DD date:
///
///   Capricorn   Dec 22 - Jan 19     Cancer      Jun 21 - Jul 22
///   Aquarius    Jan 20 - Feb 18     Leo         Jul 23 - Aug 22
///   Pisces      Feb 19 - Mar 20     Virgo       Aug 23 - Sep 22
///   Aries       Mar 21 - Apr 19     Libra       Sep 23 - Oct 22
///   Taurus      Apr 20 - May 20     Scorpio     Oct 23 - Nov 21
///   Gemini      May 21 - Jun 20     Sagittarius Nov 22 - Dec 21
std::optional<std::string> zodiac_sign(std::string_view date);

/// Per-row truth; nullopt marks a row whose date does not parse (excluded from scoring).
struct RuleTruth {
    std::vector<std::optional<bool>> mask;           // SelectRow
    std::vector<std::optional<std::string>> values;  // ImputeColumn
};

RuleTruth rule_ground_truth(SweepTask task, const Relation& r, const std::string& date_column = "birthdate");

/// Deterministic player table (name, birthdate) with birthdates spread over 1975-2004.
Relation synthetic_players(std::size_t n, std::uint64_t seed = 7);

/// Batch size encoding used by sweeps: 0 = ALL, 1 = ONE, otherwise BATCH(b).
Variant batch_variant(std::size_t batch);
std::string batch_label(std::size_t batch);

struct SweepConfig {
    SweepTask task = SweepTask::SelectRow;
    std::vector<std::size_t> scales;
    std::vector<std::size_t> batches;
    std::size_t repeats = 10;
    std::chrono::milliseconds timeout = std::chrono::minutes(30);
    std::string date_column = "birthdate";
    std::string new_column = "zodiac";
    /// Empty: the built-in requirement for the task.
    std::string requirement;

    /// Throws Error(Usage): scales strictly ascending and positive, batches non-empty, repeats >= 1.
    void validate() const;
    std::string effective_requirement() const;
};

enum class RunOutcome { Ok, Malformed, Timeout };
const char* to_string(RunOutcome o) noexcept;

struct SweepRecord {
    std::size_t scale = 0;
    std::size_t batch = 0;
    std::size_t repeat = 0;
    double quality = 0.0;
    RunOutcome outcome = RunOutcome::Ok;
    std::size_t calls = 0;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    double cost = 0.0;
    std::optional<double> wall_ms;
    std::string error;
};

struct SweepOptions {
    PromptOptions prompt;
    PriceTable prices;
    /// Record wall time per run (makes output run-dependent).
    bool timing = false;
};

/// Runs every (scale, batch, repeat) cell sequentially on the scale-prefix of
/// `r`. Malformed output, context overflow and timeouts become failed runs
/// with quality 0. ALL is never degraded to batches.
std::vector<SweepRecord> sweep(const SweepConfig& cfg, const Relation& r, Gateway& gateway,
                               const PromptTemplates& templates, const SweepOptions& opts = {});

struct CurvePoint {
    std::size_t batch = 0;
    std::size_t scale = 0;
    std::size_t runs = 0;
    double tokens_per_request = 0.0;  // (input + output) / calls over the cell
    double mean_quality = 0.0;
    double min_quality = 0.0;
    double max_quality = 0.0;
    double total_cost = 0.0;
};

/// One point per (batch, scale), ordered by batch then scale. Throws
/// Error(Domain) on an empty record set.
std::vector<CurvePoint> quality_cost_curve(const std::vector<SweepRecord>& records);

std::string sweep_csv(const std::vector<SweepRecord>& records);
std::string curve_csv(const std::vector<CurvePoint>& points);

/// Backend answering sweep prompts from the rule oracle. It reads the date
/// column out of each rendered row in the prompt. With `malformed_above`, any
/// request estimated above that many tokens gets an unparseable reply.
std::shared_ptr<ChatBackend> make_rule_backend(SweepTask task, std::string date_column = "birthdate",
                                               std::optional<std::int64_t> malformed_above = std::nullopt);

}  // namespace lro
