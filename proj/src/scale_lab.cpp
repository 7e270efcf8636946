#include "lro/scale_lab.hpp"

#include "lro/error.hpp"
#include "lro/metrics.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <random>
#include <regex>

namespace lro {

const char* to_string(SweepTask t) noexcept {
    return t == SweepTask::SelectRow ? "select_row" : "impute_column";
}

std::optional<SweepTask> parse_sweep_task(std::string_view text) {
    if (text == "select_row" || text == "select") return SweepTask::SelectRow;
    if (text == "impute_column" || text == "impute") return SweepTask::ImputeColumn;
    return std::nullopt;
}

const char* to_string(RunOutcome o) noexcept {
    switch (o) {
        case RunOutcome::Ok: return "ok";
        case RunOutcome::Malformed: return "malformed";
        case RunOutcome::Timeout: return "timeout";
    }
    return "?";
}

namespace {

std::optional<std::chrono::year_month_day> parse_date(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    int y = 0;
    unsigned m = 0, d = 0;
    for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u}) {
        if (s[i] < '0' || s[i] > '9') return std::nullopt;
    }
    y = std::stoi(std::string(s.substr(0, 4)));
    m = static_cast<unsigned>(std::stoi(std::string(s.substr(5, 2))));
    d = static_cast<unsigned>(std::stoi(std::string(s.substr(8, 2))));
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) return std::nullopt;
    return ymd;
}

struct Sign {
    unsigned month;
    unsigned first_day;  // first day of the sign within `month`
    const char* name;
};

// Sign starting in each month, in calendar order.
constexpr std::array<Sign, 12> kSigns{{
    {1, 20, "Aquarius"},
    {2, 19, "Pisces"},
    {3, 21, "Aries"},
    {4, 20, "Taurus"},
    {5, 21, "Gemini"},
    {6, 21, "Cancer"},
    {7, 23, "Leo"},
    {8, 23, "Virgo"},
    {9, 23, "Libra"},
    {10, 23, "Scorpio"},
    {11, 22, "Sagittarius"},
    {12, 22, "Capricorn"},
}};

}  // namespace

std::optional<bool> born_after_wall(std::string_view date) {
    const auto d = parse_date(date);
    if (!d) return std::nullopt;
    using namespace std::chrono;
    return sys_days(*d) > sys_days(year_month_day{year{1989}, month{11}, day{9}});
}

std::optional<std::string> zodiac_sign(std::string_view date) {
    const auto d = parse_date(date);
    if (!d) return std::nullopt;
    const unsigned m = static_cast<unsigned>(d->month());
    const unsigned day = static_cast<unsigned>(d->day());
    const auto& here = kSigns[m - 1];
    if (day >= here.first_day) return std::string(here.name);
    return std::string(kSigns[(m + 10) % 12].name);
}

RuleTruth rule_ground_truth(SweepTask task, const Relation& r, const std::string& date_column) {
    const auto c = r.require_column(date_column);
    RuleTruth t;
    for (const auto& row : r.rows()) {
        const std::string date = row[c] ? *row[c] : std::string();
        if (task == SweepTask::SelectRow) {
            t.mask.push_back(born_after_wall(date));
        } else {
            t.values.push_back(zodiac_sign(date));
        }
    }
    return t;
}

Relation synthetic_players(std::size_t n, std::uint64_t seed) {
    using namespace std::chrono;
    std::mt19937_64 rng(seed);
    const auto first = sys_days(year_month_day{year{1975}, month{1}, day{1}});
    const auto last = sys_days(year_month_day{year{2004}, month{12}, day{31}});
    const auto span = static_cast<std::uint64_t>((last - first).count() + 1);
    std::vector<Row> rows;
    rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const year_month_day ymd{first + days(static_cast<long>(rng() % span))};
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                      static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
        rows.push_back({"Player " + std::to_string(i + 1), std::string(buf)});
    }
    return Relation("players", {"name", "birthdate"}, std::move(rows));
}

Variant batch_variant(std::size_t batch) {
    if (batch == 0) return Variant::all();
    if (batch == 1) return Variant::one();
    return Variant::batched(batch);
}

std::string batch_label(std::size_t batch) {
    if (batch == 0) return "ALL";
    if (batch == 1) return "ONE";
    return std::to_string(batch);
}

void SweepConfig::validate() const {
    if (scales.empty()) fail(ErrorKind::Usage, "sweep needs at least one scale");
    for (std::size_t i = 0; i < scales.size(); ++i) {
        if (scales[i] == 0) fail(ErrorKind::Usage, "sweep scales must be positive");
        if (i && scales[i] <= scales[i - 1]) fail(ErrorKind::Usage, "sweep scales must be strictly ascending");
    }
    if (batches.empty()) fail(ErrorKind::Usage, "sweep needs at least one batch size");
    if (repeats < 1) fail(ErrorKind::Usage, "sweep repeats must be at least 1");
    if (timeout.count() <= 0) fail(ErrorKind::Usage, "sweep timeout must be positive");
    if (date_column.empty()) fail(ErrorKind::Usage, "sweep needs a date column");
    if (task == SweepTask::ImputeColumn && new_column.empty()) fail(ErrorKind::Usage, "sweep needs a new column name");
}

std::string SweepConfig::effective_requirement() const {
    if (!requirement.empty()) return requirement;
    if (task == SweepTask::SelectRow) return "The player was born after the fall of the Berlin Wall.";
    return "The Western zodiac sign of the player, derived from the date of birth.";
}

namespace {

double run_quality(const SweepConfig& cfg, const RuleTruth& truth, const Relation& prefix, OperatorContext& ctx,
                   const Requirement& l, const Variant& v) {
    if (cfg.task == SweepTask::SelectRow) {
        const auto mask =
            select_mask(ctx, extract_elements(prefix, Granularity::Row), RenderContext{&prefix, nullptr}, l, v);
        std::vector<std::string> pred, want;
        for (std::size_t i = 0; i < prefix.row_count(); ++i) {
            if (!truth.mask[i]) continue;
            if (mask[i]) pred.push_back(std::to_string(i));
            if (*truth.mask[i]) want.push_back(std::to_string(i));
        }
        return prf(pred, want).f1;
    }
    const auto out = lro_impute(ctx, prefix, Granularity::Column, l, v, ImputeSpec{cfg.new_column, 0});
    const auto c = out.require_column(cfg.new_column);
    std::vector<Cell> pred, want;
    for (std::size_t i = 0; i < prefix.row_count(); ++i) {
        if (!truth.values[i]) continue;
        pred.push_back(out.at(i, c));
        want.push_back(*truth.values[i]);
    }
    if (want.empty()) return 1.0;
    return exact_match_ratio(pred, want, CanonOptions{true});
}

}  // namespace

std::vector<SweepRecord> sweep(const SweepConfig& cfg, const Relation& r, Gateway& gateway,
                               const PromptTemplates& templates, const SweepOptions& opts) {
    cfg.validate();
    if (r.row_count() < cfg.scales.back()) {
        fail(ErrorKind::Usage, "relation has " + std::to_string(r.row_count()) + " rows, sweep needs " +
                                   std::to_string(cfg.scales.back()));
    }
    r.require_column(cfg.date_column);
    const Requirement l(cfg.effective_requirement());

    std::vector<SweepRecord> out;
    for (const auto scale : cfg.scales) {
        const Relation prefix = take(r, scale);
        const auto truth = rule_ground_truth(cfg.task, prefix, cfg.date_column);
        for (const auto batch : cfg.batches) {
            const Variant v = batch_variant(batch);
            for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
                SweepRecord rec;
                rec.scale = scale;
                rec.batch = batch;
                rec.repeat = rep;
                Gateway gw = gateway.fork();
                OperatorContext ctx(gw, templates, opts.prompt);
                ctx.allow_degrade = false;
                const auto start = Clock::now();
                try {
                    QueryScope scope(gw, cfg.timeout);
                    rec.quality = run_quality(cfg, truth, prefix, ctx, l, v);
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::MalformedOutput && e.kind() != ErrorKind::ContextOverflow &&
                        e.kind() != ErrorKind::Timeout) {
                        throw;
                    }
                    rec.outcome = e.kind() == ErrorKind::Timeout ? RunOutcome::Timeout : RunOutcome::Malformed;
                    rec.quality = 0.0;
                    rec.error = std::string(to_string(e.kind())) + ": " + e.what();
                }
                if (opts.timing) rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
                const auto ledger = gw.ledger();
                rec.calls = ledger.calls();
                rec.input_tokens = ledger.input_tokens();
                rec.output_tokens = ledger.output_tokens();
                UsageLedger priced;
                for (const auto& u : ledger.records()) {
                    if (opts.prices.count(u.model)) priced.append(u);
                }
                rec.cost = cost(priced, opts.prices).total;
                out.push_back(std::move(rec));
            }
        }
    }
    return out;
}

std::vector<CurvePoint> quality_cost_curve(const std::vector<SweepRecord>& records) {
    if (records.empty()) fail(ErrorKind::Domain, "quality-cost curve needs at least one record");
    // ALL (0) sorts last so the batch axis reads ONE, BATCH(b)..., ALL.
    auto axis = [](std::size_t b) { return b == 0 ? SIZE_MAX : b; };
    std::map<std::pair<std::size_t, std::size_t>, std::vector<const SweepRecord*>> cells;
    for (const auto& r : records) cells[{axis(r.batch), r.scale}].push_back(&r);
    std::vector<CurvePoint> out;
    for (const auto& [key, recs] : cells) {
        CurvePoint p;
        p.batch = recs.front()->batch;
        p.scale = key.second;
        p.runs = recs.size();
        p.min_quality = 1.0;
        p.max_quality = 0.0;
        double sum = 0.0;
        std::int64_t tokens = 0;
        std::size_t calls = 0;
        for (const auto* r : recs) {
            sum += r->quality;
            p.min_quality = std::min(p.min_quality, r->quality);
            p.max_quality = std::max(p.max_quality, r->quality);
            tokens += r->input_tokens + r->output_tokens;
            calls += r->calls;
            p.total_cost += r->cost;
        }
        p.mean_quality = sum / double(recs.size());
        p.tokens_per_request = calls ? double(tokens) / double(calls) : 0.0;
        out.push_back(p);
    }
    return out;
}

namespace {

std::string fixed(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string csv_text(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string sweep_csv(const std::vector<SweepRecord>& records) {
    const bool timing =
        std::any_of(records.begin(), records.end(), [](const SweepRecord& r) { return r.wall_ms.has_value(); });
    std::string out = "scale,batch,repeat,outcome,quality,calls,input_tokens,output_tokens,cost";
    if (timing) out += ",wall_ms";
    out += ",error\n";
    for (const auto& r : records) {
        out += std::to_string(r.scale) + "," + batch_label(r.batch) + "," + std::to_string(r.repeat) + "," +
               to_string(r.outcome) + "," + fixed(r.quality) + "," + std::to_string(r.calls) + "," +
               std::to_string(r.input_tokens) + "," + std::to_string(r.output_tokens) + "," + fixed(r.cost);
        if (timing) out += "," + (r.wall_ms ? fixed(*r.wall_ms) : std::string());
        out += "," + csv_text(r.error) + "\n";
    }
    return out;
}

std::string curve_csv(const std::vector<CurvePoint>& points) {
    std::string out = "batch,scale,runs,tokens_per_request,mean_quality,min_quality,max_quality,total_cost\n";
    for (const auto& p : points) {
        out += batch_label(p.batch) + "," + std::to_string(p.scale) + "," + std::to_string(p.runs) + "," +
               fixed(p.tokens_per_request) + "," + fixed(p.mean_quality) + "," + fixed(p.min_quality) + "," +
               fixed(p.max_quality) + "," + fixed(p.total_cost) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rule backend

namespace {

class RuleBackend : public ChatBackend {
public:
    RuleBackend(SweepTask task, std::string column, std::optional<std::int64_t> limit)
        : task_(task), pattern_(std::regex_replace(column, std::regex(R"([.^$|()\[\]{}*+?\\])"), R"(\$&)") +
                                 R"(: ([^;\n]*))"),
          limit_(limit) {}

    ChatResponse send(const BackendConfig&, const ChatRequest& req, const CallInfo&, const CancelToken& cancel) override {
        if (cancel.cancelled()) fail(ErrorKind::Timeout, "request cancelled");
        ChatResponse resp;
        resp.input_tokens = estimate_request_tokens(req);
        if (limit_ && resp.input_tokens > *limit_) {
            resp.text = "The input is too long to process reliably.";
        } else {
            resp.text = answer(req);
        }
        resp.output_tokens = estimate_tokens(resp.text);
        return resp;
    }

private:
    std::vector<std::string> dates(const std::string& user) const {
        std::vector<std::string> out;
        for (std::sregex_iterator it(user.begin(), user.end(), pattern_), end; it != end; ++it) {
            out.push_back((*it)[1].str());
        }
        return out;
    }

    std::string answer(const ChatRequest& req) const {
        const auto ds = dates(req.user);
        const bool one = req.tag.variant == "ONE";
        if (task_ == SweepTask::SelectRow) {
            if (one) return serialize_verdict(PromptShape::SelectOne, !ds.empty() && born_after_wall(ds.front()).value_or(false));
            std::vector<std::size_t> keep;
            for (std::size_t i = 0; i < ds.size(); ++i) {
                if (born_after_wall(ds[i]).value_or(false)) keep.push_back(i);
            }
            return serialize_indices(PromptShape::SelectAll, keep);
        }
        std::vector<Cell> values;
        for (const auto& d : ds) values.push_back(zodiac_sign(d).value_or("unknown"));
        if (one) {
            if (values.empty()) values.push_back(std::string("unknown"));
            values.resize(1);
            return serialize_cells(PromptShape::ImputeColumnOne, values);
        }
        return serialize_cells(PromptShape::ImputeColumnAll, values);
    }

    SweepTask task_;
    std::regex pattern_;
    std::optional<std::int64_t> limit_;
};

}  // namespace

std::shared_ptr<ChatBackend> make_rule_backend(SweepTask task, std::string date_column,
                                               std::optional<std::int64_t> malformed_above) {
    return std::make_shared<RuleBackend>(task, std::move(date_column), malformed_above);
}

}  // namespace lro
