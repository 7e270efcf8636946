#include "lro/operators.hpp"

#include "lro/error.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <set>

namespace lro {

using detail::iequals;
using detail::trim;
using detail::upper;

const char* to_string(LroKind kind) noexcept {
    switch (kind) {
        case LroKind::Select: return "select";
        case LroKind::Match: return "match";
        case LroKind::Impute: return "impute";
        case LroKind::Cluster: return "cluster";
        case LroKind::Order: return "order";
    }
    return "?";
}

std::optional<LroKind> parse_lro_kind(std::string_view text) {
    std::string t = detail::lower(trim(text));
    if (t.rfind("llm_", 0) == 0 || t.rfind("llm-", 0) == 0) t = t.substr(4);
    for (auto k : {LroKind::Select, LroKind::Match, LroKind::Impute, LroKind::Cluster, LroKind::Order}) {
        if (t == to_string(k)) return k;
    }
    return std::nullopt;
}

std::string Variant::to_string() const {
    switch (kind) {
        case Kind::All: return "ALL";
        case Kind::One: return "ONE";
        case Kind::Semi: return "SEMI";
        case Kind::Pair: return "PAIR";
        case Kind::Sort: return "SORT";
        case Kind::Score: return "SCORE";
        case Kind::Batch: return "BATCH(" + std::to_string(batch) + ")";
    }
    return "?";
}

std::optional<Variant> parse_variant(std::string_view text) {
    std::string t = upper(trim(text));
    if (t.rfind("LLM-", 0) == 0 || t.rfind("LLM_", 0) == 0) t = t.substr(4);
    if (t == "ALL") return Variant::all();
    if (t == "ONE") return Variant::one();
    if (t == "SEMI") return Variant::semi();
    if (t == "PAIR") return Variant::pair();
    if (t == "SORT") return Variant::sort();
    if (t == "SCORE") return Variant::score();
    if (t.rfind("BATCH", 0) == 0) {
        std::string rest(trim(std::string_view(t).substr(5)));
        if (rest.size() >= 2 && rest.front() == '(' && rest.back() == ')') {
            rest = std::string(trim(std::string_view(rest).substr(1, rest.size() - 2)));
        } else if (!rest.empty() && (rest.front() == '-' || rest.front() == ':')) {
            rest = std::string(trim(std::string_view(rest).substr(1)));
        }
        if (rest.empty() || !std::all_of(rest.begin(), rest.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            return std::nullopt;
        }
        if (rest.size() > 9) return std::nullopt;
        const auto b = static_cast<std::size_t>(std::stoul(rest));
        if (b == 0) return std::nullopt;
        return Variant::batched(b);
    }
    return std::nullopt;
}

bool is_supported(LroKind kind, Granularity g) {
    switch (kind) {
        case LroKind::Select:
        case LroKind::Cluster: return g == Granularity::Row || g == Granularity::Column || g == Granularity::Table;
        case LroKind::Match:
        case LroKind::Impute: return g == Granularity::Cell || g == Granularity::Row || g == Granularity::Column;
        case LroKind::Order: return g == Granularity::Row;
    }
    return false;
}

bool is_variant_allowed(LroKind kind, Granularity g, const Variant& v) {
    if (!is_supported(kind, g)) return false;
    using K = Variant::Kind;
    if (v.kind == K::Batch && v.batch == 0) return false;
    switch (kind) {
        case LroKind::Select: return v.kind == K::All || v.kind == K::One || v.kind == K::Batch;
        case LroKind::Match: return v.kind == K::All || v.kind == K::One || v.kind == K::Semi;
        case LroKind::Impute:
            if (g == Granularity::Row) return v.kind == K::One;
            return v.kind == K::All || v.kind == K::One || v.kind == K::Batch;
        case LroKind::Cluster: return v.kind == K::All || v.kind == K::One;
        case LroKind::Order:
            return v.kind == K::All || v.kind == K::Pair || v.kind == K::Sort || v.kind == K::Score;
    }
    return false;
}

void require_supported(LroKind kind, Granularity g, const Variant& v) {
    if (!is_supported(kind, g)) {
        fail(ErrorKind::Usage, std::string(to_string(kind)) + " is not defined at " + to_string(g) + " granularity");
    }
    if (!is_variant_allowed(kind, g, v)) {
        fail(ErrorKind::Usage, std::string(to_string(kind)) + "/" + to_string(g) + " does not support variant " +
                                   v.to_string());
    }
}

Variant best_practice_variant(LroKind kind, Granularity g) {
    if (!is_supported(kind, g)) {
        fail(ErrorKind::Usage, std::string(to_string(kind)) + " is not defined at " + to_string(g) + " granularity");
    }
    switch (kind) {
        case LroKind::Select: return g == Granularity::Row ? Variant::one() : Variant::all();
        case LroKind::Match: return g == Granularity::Row ? Variant::semi() : Variant::all();
        case LroKind::Impute: return g == Granularity::Cell ? Variant::all() : Variant::one();
        case LroKind::Cluster:
        case LroKind::Order: return Variant::all();
    }
    return Variant::all();
}

Requirement::Requirement(std::string text) : text_(std::move(text)) {
    if (trim(text_).empty()) fail(ErrorKind::Usage, "requirement must not be empty");
}

namespace {

std::size_t budget(const OperatorContext& ctx) { return ctx.gateway.config().max_context_tokens; }

/// Sends `reqs` in one fan-out and parses each completion. Malformed
/// completions are re-asked with a format reminder, up to the configured
/// number of retries, then surface as Error(MalformedOutput).
std::vector<ParsedValue> ask(OperatorContext& ctx, const std::vector<ChatRequest>& reqs,
                             const std::vector<ExpectedShape>& shapes) {
    std::vector<std::optional<ParsedValue>> out(reqs.size());
    std::vector<std::size_t> pending(reqs.size());
    std::iota(pending.begin(), pending.end(), std::size_t{0});
    std::string last_error;
    for (int attempt = 0;; ++attempt) {
        std::vector<ChatRequest> batch;
        batch.reserve(pending.size());
        for (auto i : pending) {
            batch.push_back(reqs[i]);
            if (attempt > 0) batch.back().user += kFormatReminder;
        }
        const auto responses = ctx.gateway.complete_many(batch);
        std::vector<std::size_t> bad;
        for (std::size_t k = 0; k < pending.size(); ++k) {
            const auto i = pending[k];
            try {
                out[i] = parse_completion(shapes[i], responses[k].text);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::MalformedOutput) throw;
                last_error = e.what();
                bad.push_back(i);
            }
        }
        if (bad.empty()) break;
        if (attempt >= ctx.gateway.config().malformed_retries) {
            fail(ErrorKind::MalformedOutput, reqs[bad.front()].tag.to_string() + ": " + last_error);
        }
        pending = std::move(bad);
    }
    std::vector<ParsedValue> result;
    result.reserve(out.size());
    for (auto& v : out) result.push_back(std::move(*v));
    return result;
}

ParsedValue ask_one(OperatorContext& ctx, const ChatRequest& req, const ExpectedShape& shape) {
    return std::move(ask(ctx, {req}, {shape}).front());
}

/// Builds the requests for chunks of `b` items; `make(begin, end, variant)`
/// renders one chunk and may throw ContextOverflow.
using ChunkMaker = std::function<ChatRequest(std::size_t, std::size_t, const std::string&)>;

std::vector<ChatRequest> chunk_requests(std::size_t n, std::size_t b, const std::string& variant,
                                        const ChunkMaker& make) {
    std::vector<ChatRequest> reqs;
    for (std::size_t begin = 0; begin < n; begin += b) reqs.push_back(make(begin, std::min(n, begin + b), variant));
    return reqs;
}

/// ALL / BATCH(b) request plan. An ALL prompt that does not fit the context
/// is split into the largest BATCH(b) whose every chunk fits, when allowed.
std::vector<ChatRequest> plan_chunks(OperatorContext& ctx, std::string_view op, std::size_t n, const Variant& v,
                                     const ChunkMaker& make) {
    if (n == 0) return {};
    if (v.kind == Variant::Kind::Batch) return chunk_requests(n, v.batch, v.to_string(), make);
    try {
        return chunk_requests(n, n, "ALL", make);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::ContextOverflow || !ctx.allow_degrade || n == 1) throw;
    }
    auto fits = [&](std::size_t b) {
        try {
            chunk_requests(n, b, "BATCH(" + std::to_string(b) + ")", make);
            return true;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::ContextOverflow) throw;
            return false;
        }
    };
    if (!fits(1)) {
        fail(ErrorKind::ContextOverflow,
             std::string(op) + ": a single element does not fit the " + std::to_string(budget(ctx)) + "-token context");
    }
    std::size_t lo = 1, hi = n - 1;
    while (lo < hi) {
        const std::size_t mid = lo + (hi - lo + 1) / 2;
        if (fits(mid)) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    ctx.events.push_back(std::string(op) + ": ALL prompt exceeds the " + std::to_string(budget(ctx)) +
                         "-token context; degraded to BATCH(" + std::to_string(lo) + ")");
    return chunk_requests(n, lo, "BATCH(" + std::to_string(lo) + ")", make);
}

std::vector<std::size_t> id_range(std::size_t begin, std::size_t end) {
    std::vector<std::size_t> ids(end - begin);
    std::iota(ids.begin(), ids.end(), begin);
    return ids;
}

std::vector<std::string> render_all(const std::vector<Element>& elements, const PromptOptions& opts,
                                    const RenderContext& rc) {
    std::vector<std::string> out;
    out.reserve(elements.size());
    for (const auto& e : elements) out.push_back(render_element(e, opts, rc));
    return out;
}

std::string render_row(const Relation& r, std::size_t i, const PromptOptions& opts) {
    return render_element(RowRef{i, r.rows()[i]}, opts, RenderContext{&r, nullptr});
}

}  // namespace

// ---------------------------------------------------------------------------
// Select

std::vector<bool> select_mask(OperatorContext& ctx, const std::vector<Element>& elements, const RenderContext& render,
                              const Requirement& l, const Variant& v) {
    const auto rendered = render_all(elements, ctx.options, render);
    const std::size_t n = rendered.size();
    std::vector<bool> mask(n, false);
    if (n == 0) return mask;

    if (v.kind == Variant::Kind::One) {
        std::vector<ChatRequest> reqs;
        std::vector<ExpectedShape> shapes;
        for (std::size_t i = 0; i < n; ++i) {
            PromptPayload p;
            p.element = rendered[i];
            reqs.push_back(build_prompt(ctx.templates, PromptShape::SelectOne, p, l.text(), ctx.options,
                                        RequestTag{"select", "ONE", {i}, {}}, budget(ctx)));
            shapes.push_back({PromptShape::SelectOne, 1, 0, {}});
        }
        const auto parsed = ask(ctx, reqs, shapes);
        for (std::size_t i = 0; i < n; ++i) mask[i] = std::get<ParsedVerdict>(parsed[i]).value;
        return mask;
    }

    const ChunkMaker make = [&](std::size_t begin, std::size_t end, const std::string& variant) {
        PromptPayload p;
        p.candidates.assign(rendered.begin() + static_cast<std::ptrdiff_t>(begin),
                            rendered.begin() + static_cast<std::ptrdiff_t>(end));
        return build_prompt(ctx.templates, PromptShape::SelectAll, p, l.text(), ctx.options,
                            RequestTag{"select", variant, id_range(begin, end), {}}, budget(ctx));
    };
    const auto reqs = plan_chunks(ctx, "select", n, v, make);
    std::vector<ExpectedShape> shapes;
    for (const auto& r : reqs) shapes.push_back({PromptShape::SelectAll, r.tag.element_ids.size(), 0, {}});
    const auto parsed = ask(ctx, reqs, shapes);
    for (std::size_t k = 0; k < reqs.size(); ++k) {
        for (auto local : std::get<ParsedIndexList>(parsed[k]).indices) mask[reqs[k].tag.element_ids[local]] = true;
    }
    return mask;
}

Relation lro_select(OperatorContext& ctx, const Relation& r, Granularity g, const Requirement& l, const Variant& v) {
    require_supported(LroKind::Select, g, v);
    if (g == Granularity::Table) fail(ErrorKind::Usage, "table-level select takes a database");
    const auto mask = select_mask(ctx, extract_elements(r, g), RenderContext{&r, nullptr}, l, v);
    if (g == Granularity::Row) return filter_by_mask(r, mask);
    std::vector<std::string> keep;
    for (std::size_t c = 0; c < r.column_count(); ++c) {
        if (mask[c]) keep.push_back(r.columns()[c]);
    }
    return project(r, keep);
}

Database lro_select(OperatorContext& ctx, const Database& db, const Requirement& l, const Variant& v) {
    require_supported(LroKind::Select, Granularity::Table, v);
    const auto mask = select_mask(ctx, extract_elements(db, Granularity::Table), RenderContext{nullptr, &db}, l, v);
    Database out;
    for (std::size_t i = 0; i < db.size(); ++i) {
        if (mask[i]) out.add(db.relations()[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Match

namespace {

std::vector<std::string> match_side(const Relation& r, Granularity g, const std::string* key,
                                    const PromptOptions& opts) {
    if (g == Granularity::Cell) {
        const auto c = r.require_column(*key);
        std::vector<std::string> out;
        for (std::size_t i = 0; i < r.row_count(); ++i) {
            out.push_back(render_element(CellRef{i, c, r.at(i, c)}, opts, RenderContext{&r, nullptr}));
        }
        return out;
    }
    return render_all(extract_elements(r, g), opts, RenderContext{&r, nullptr});
}

}  // namespace

MatchResult lro_match(OperatorContext& ctx, const Relation& left, const Relation& right, Granularity g,
                      const Requirement& l, const Variant& v, const std::optional<MatchKeys>& keys) {
    require_supported(LroKind::Match, g, v);
    if (g == Granularity::Cell && !keys) fail(ErrorKind::Usage, "cell-level match needs key columns");
    const auto lhs = match_side(left, g, keys ? &keys->left : nullptr, ctx.options);
    const auto rhs = match_side(right, g, keys ? &keys->right : nullptr, ctx.options);
    const std::size_t n = lhs.size(), m = rhs.size();
    std::set<std::pair<std::size_t, std::size_t>> pairs;
    if (n == 0 || m == 0) return {};

    std::vector<ChatRequest> reqs;
    std::vector<ExpectedShape> shapes;
    switch (v.kind) {
        case Variant::Kind::All: {
            PromptPayload p;
            p.candidates = lhs;
            p.right = rhs;
            reqs.push_back(build_prompt(ctx.templates, PromptShape::MatchAll, p, l.text(), ctx.options,
                                        RequestTag{"match", "ALL", id_range(0, n), id_range(0, m)}, budget(ctx)));
            shapes.push_back({PromptShape::MatchAll, n, m, {}});
            const auto parsed = ask(ctx, reqs, shapes);
            for (const auto& pr : std::get<ParsedPairList>(parsed[0]).pairs) pairs.insert(pr);
            break;
        }
        case Variant::Kind::Semi: {
            for (std::size_t i = 0; i < n; ++i) {
                PromptPayload p;
                p.element = lhs[i];
                p.right = rhs;
                reqs.push_back(build_prompt(ctx.templates, PromptShape::MatchSemi, p, l.text(), ctx.options,
                                            RequestTag{"match", "SEMI", {i}, id_range(0, m)}, budget(ctx)));
                shapes.push_back({PromptShape::MatchSemi, 1, m, {}});
            }
            const auto parsed = ask(ctx, reqs, shapes);
            for (std::size_t i = 0; i < n; ++i) {
                for (auto j : std::get<ParsedIndexList>(parsed[i]).indices) pairs.insert({i, j});
            }
            break;
        }
        case Variant::Kind::One: {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    PromptPayload p;
                    p.element = lhs[i];
                    p.second = rhs[j];
                    reqs.push_back(build_prompt(ctx.templates, PromptShape::MatchOne, p, l.text(), ctx.options,
                                                RequestTag{"match", "ONE", {i}, {j}}, budget(ctx)));
                    shapes.push_back({PromptShape::MatchOne, 1, 0, {}});
                }
            }
            const auto parsed = ask(ctx, reqs, shapes);
            for (std::size_t k = 0; k < parsed.size(); ++k) {
                if (std::get<ParsedVerdict>(parsed[k]).value) pairs.insert({k / m, k % m});
            }
            break;
        }
        default: break;
    }
    return MatchResult{{pairs.begin(), pairs.end()}};
}

Relation materialize_join(const Relation& left, const Relation& right, const MatchKeys& keys, const MatchResult& m) {
    const auto lc = left.require_column(keys.left);
    const auto rc = right.require_column(keys.right);
    std::set<std::pair<std::string, std::string>> matched;
    for (const auto& [i, j] : m.pairs) {
        if (i >= left.row_count() || j >= right.row_count()) {
            fail(ErrorKind::Domain, "match pair (" + std::to_string(i) + ", " + std::to_string(j) +
                                        ") refers to rows that do not exist");
        }
        const auto& a = left.at(i, lc);
        const auto& b = right.at(j, rc);
        if (a && b) matched.insert({*a, *b});
    }

    std::vector<std::string> columns = left.columns();
    std::set<std::string> taken(columns.begin(), columns.end());
    for (const auto& c : right.columns()) {
        std::string name = taken.count(c) ? right.name() + "." + c : c;
        if (!taken.insert(name).second) fail(ErrorKind::Domain, "join output column '" + name + "' is ambiguous");
        columns.push_back(std::move(name));
    }

    std::vector<Row> rows;
    for (const auto& lr : left.rows()) {
        if (!lr[lc]) continue;
        for (const auto& rr : right.rows()) {
            if (!rr[rc] || !matched.count({*lr[lc], *rr[rc]})) continue;
            Row row = lr;
            row.insert(row.end(), rr.begin(), rr.end());
            rows.push_back(std::move(row));
        }
    }
    return Relation(left.name() + "_" + right.name(), std::move(columns), std::move(rows));
}

// ---------------------------------------------------------------------------
// Impute

namespace {

/// Complete rows (no nulls) used as EX reference rows, excluding `skip`.
std::vector<std::size_t> example_rows(const Relation& r, const PromptOptions& opts, const std::set<std::size_t>& skip) {
    std::vector<std::size_t> out;
    if (!opts.examples) return out;
    for (std::size_t i = 0; i < r.row_count() && out.size() < opts.example_count; ++i) {
        if (skip.count(i)) continue;
        const auto& row = r.rows()[i];
        if (std::all_of(row.begin(), row.end(), [](const Cell& c) { return c.has_value(); })) out.push_back(i);
    }
    return out;
}

std::string numbered_rows(const Relation& r, const std::vector<std::size_t>& rows, const PromptOptions& opts,
                          const char* label = "row") {
    std::string out;
    for (auto i : rows) {
        if (!out.empty()) out += "\n";
        out += std::string(label) + " " + std::to_string(i) + ": " + render_row(r, i, opts);
    }
    return out;
}

Relation impute_cells(OperatorContext& ctx, const Relation& r, const Requirement& l, const Variant& v) {
    std::vector<std::pair<std::size_t, std::size_t>> targets;
    for (std::size_t i = 0; i < r.row_count(); ++i) {
        for (std::size_t c = 0; c < r.column_count(); ++c) {
            if (!r.at(i, c)) targets.push_back({i, c});
        }
    }
    if (targets.empty()) fail(ErrorKind::Domain, "cell impute on '" + r.name() + "': no missing cells");
    const std::size_t n = targets.size();

    std::vector<ChatRequest> reqs;
    if (v.kind == Variant::Kind::One) {
        const auto examples = example_rows(r, ctx.options, {});
        for (std::size_t t = 0; t < n; ++t) {
            PromptPayload p;
            p.element = render_row(r, targets[t].first, ctx.options);
            p.column = r.columns()[targets[t].second];
            p.context = numbered_rows(r, examples, ctx.options, "example row");
            reqs.push_back(build_prompt(ctx.templates, PromptShape::ImputeCellOne, p, l.text(), ctx.options,
                                        RequestTag{"impute", "ONE", {t}, {}}, budget(ctx)));
        }
    } else {
        const ChunkMaker make = [&](std::size_t begin, std::size_t end, const std::string& variant) {
            std::set<std::size_t> rows;
            PromptPayload p;
            for (std::size_t t = begin; t < end; ++t) {
                rows.insert(targets[t].first);
                p.candidates.push_back("row " + std::to_string(targets[t].first) + ", column \"" +
                                       r.columns()[targets[t].second] + "\"");
            }
            p.context = numbered_rows(r, {rows.begin(), rows.end()}, ctx.options);
            const auto examples = example_rows(r, ctx.options, rows);
            if (!examples.empty()) p.context += "\n" + numbered_rows(r, examples, ctx.options, "example row");
            return build_prompt(ctx.templates, PromptShape::ImputeCellAll, p, l.text(), ctx.options,
                                RequestTag{"impute", variant, id_range(begin, end), {}}, budget(ctx));
        };
        reqs = plan_chunks(ctx, "impute", n, v, make);
    }

    std::vector<ExpectedShape> shapes;
    for (const auto& q : reqs) {
        shapes.push_back({v.kind == Variant::Kind::One ? PromptShape::ImputeCellOne : PromptShape::ImputeCellAll,
                          q.tag.element_ids.size(), 0, {}});
    }
    const auto parsed = ask(ctx, reqs, shapes);
    std::vector<Row> rows = r.rows();
    for (std::size_t k = 0; k < reqs.size(); ++k) {
        const auto& values = std::get<ParsedCells>(parsed[k]).values;
        for (std::size_t j = 0; j < values.size(); ++j) {
            const auto [row, col] = targets[reqs[k].tag.element_ids[j]];
            rows[row][col] = values[j];
        }
    }
    return Relation(r.name(), r.columns(), std::move(rows));
}

Relation impute_column(OperatorContext& ctx, const Relation& r, const Requirement& l, const Variant& v,
                       const std::string& column) {
    if (trim(column).empty()) fail(ErrorKind::Usage, "column impute needs a new column name");
    if (r.column_index(column)) fail(ErrorKind::Domain, "column '" + column + "' already exists in '" + r.name() + "'");
    const std::size_t n = r.row_count();
    std::vector<std::string> rendered;
    for (std::size_t i = 0; i < n; ++i) rendered.push_back(render_row(r, i, ctx.options));

    std::vector<ChatRequest> reqs;
    if (v.kind == Variant::Kind::One) {
        for (std::size_t i = 0; i < n; ++i) {
            PromptPayload p;
            p.element = rendered[i];
            p.column = column;
            reqs.push_back(build_prompt(ctx.templates, PromptShape::ImputeColumnOne, p, l.text(), ctx.options,
                                        RequestTag{"impute", "ONE", {i}, {}}, budget(ctx)));
        }
    } else {
        const ChunkMaker make = [&](std::size_t begin, std::size_t end, const std::string& variant) {
            PromptPayload p;
            p.candidates.assign(rendered.begin() + static_cast<std::ptrdiff_t>(begin),
                                rendered.begin() + static_cast<std::ptrdiff_t>(end));
            p.column = column;
            return build_prompt(ctx.templates, PromptShape::ImputeColumnAll, p, l.text(), ctx.options,
                                RequestTag{"impute", variant, id_range(begin, end), {}}, budget(ctx));
        };
        reqs = plan_chunks(ctx, "impute", n, v, make);
    }
    std::vector<ExpectedShape> shapes;
    for (const auto& q : reqs) {
        shapes.push_back({v.kind == Variant::Kind::One ? PromptShape::ImputeColumnOne : PromptShape::ImputeColumnAll,
                          q.tag.element_ids.size(), 0, {}});
    }
    const auto parsed = ask(ctx, reqs, shapes);
    std::vector<Cell> values(n);
    for (std::size_t k = 0; k < reqs.size(); ++k) {
        const auto& got = std::get<ParsedCells>(parsed[k]).values;
        for (std::size_t j = 0; j < got.size(); ++j) values[reqs[k].tag.element_ids[j]] = got[j];
    }
    return append_column(r, column, std::move(values));
}

Relation impute_rows(OperatorContext& ctx, const Relation& r, const Requirement& l, std::size_t count) {
    if (count == 0) fail(ErrorKind::Usage, "row impute needs a positive row count");
    if (r.column_count() == 0) fail(ErrorKind::Domain, "row impute on a relation without columns");
    std::string schema;
    for (const auto& c : r.columns()) schema += (schema.empty() ? "" : ", ") + c;
    Relation current = r;
    for (std::size_t k = 0; k < count; ++k) {
        PromptPayload p;
        p.column = schema;
        std::vector<std::size_t> all(current.row_count());
        std::iota(all.begin(), all.end(), std::size_t{0});
        p.context = numbered_rows(current, all, ctx.options);
        const auto req = build_prompt(ctx.templates, PromptShape::ImputeRowOne, p, l.text(), ctx.options,
                                      RequestTag{"impute", "ONE", {r.row_count() + k}, {}}, budget(ctx));
        auto parsed = ask_one(ctx, req, {PromptShape::ImputeRowOne, 1, 0, r.columns()});
        current = append_rows(current, {std::get<ParsedCells>(parsed).values});
    }
    return current;
}

}  // namespace

Relation lro_impute(OperatorContext& ctx, const Relation& r, Granularity g, const Requirement& l, const Variant& v,
                    const ImputeSpec& spec) {
    require_supported(LroKind::Impute, g, v);
    switch (g) {
        case Granularity::Cell: return impute_cells(ctx, r, l, v);
        case Granularity::Column: return impute_column(ctx, r, l, v, spec.new_column);
        case Granularity::Row: return impute_rows(ctx, r, l, spec.rows);
        case Granularity::Table: break;
    }
    fail(ErrorKind::Usage, "impute is not defined at table granularity");
}

// ---------------------------------------------------------------------------
// Cluster

std::vector<std::string> ClusterResult::labels() const {
    std::vector<std::string> out(element_count);
    for (const auto& c : clusters) {
        for (auto m : c.members) {
            if (m < element_count) out[m] = c.label;
        }
    }
    return out;
}

bool ClusterResult::is_partition() const {
    std::vector<int> hits(element_count, 0);
    for (const auto& c : clusters) {
        if (c.members.empty()) return false;
        for (auto m : c.members) {
            if (m >= element_count) return false;
            ++hits[m];
        }
    }
    return std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; });
}

ClusterResult repair_partition(std::size_t n, std::vector<ParsedCluster> raw) {
    ClusterResult out;
    out.element_count = n;
    std::vector<long> owner(n, -1);
    for (std::size_t k = 0; k < raw.size(); ++k) {
        Cluster c{std::string(trim(raw[k].label)), {}};
        for (auto m : raw[k].members) {
            if (m >= n) {
                out.warnings.push_back("cluster member " + std::to_string(m) + " out of range; ignored");
                continue;
            }
            if (owner[m] == static_cast<long>(k)) continue;
            if (owner[m] >= 0) {
                out.warnings.push_back("element " + std::to_string(m) +
                                       " assigned to more than one cluster; kept the first");
                continue;
            }
            owner[m] = static_cast<long>(k);
            c.members.push_back(m);
        }
        if (c.members.empty()) {
            if (!raw[k].members.empty() || !c.label.empty()) {
                out.warnings.push_back("dropped empty cluster '" + c.label + "'");
            }
            continue;
        }
        std::sort(c.members.begin(), c.members.end());
        out.clusters.push_back(std::move(c));
    }
    for (std::size_t m = 0; m < n; ++m) {
        if (owner[m] >= 0) continue;
        out.warnings.push_back("element " + std::to_string(m) + " was not assigned; placed in its own cluster");
        out.clusters.push_back(Cluster{"", {m}});
    }

    std::set<std::string> used;
    for (const auto& c : out.clusters) {
        if (!c.label.empty()) used.insert(c.label);
    }
    std::set<std::string> seen;
    std::size_t fresh = 0;
    for (auto& c : out.clusters) {
        if (c.label.empty()) {
            do {
                c.label = "cluster_" + std::to_string(++fresh);
            } while (used.count(c.label));
            used.insert(c.label);
        } else if (seen.count(c.label)) {
            std::string base = c.label;
            for (int s = 2;; ++s) {
                c.label = base + " (" + std::to_string(s) + ")";
                if (!used.count(c.label)) break;
            }
            used.insert(c.label);
        }
        seen.insert(c.label);
    }
    return out;
}

namespace {

ClusterResult cluster_elements(OperatorContext& ctx, const std::vector<std::string>& rendered, const Requirement& l,
                               const Variant& v) {
    const std::size_t n = rendered.size();
    ClusterResult result;
    if (n == 0) return result;

    if (v.kind == Variant::Kind::All) {
        PromptPayload p;
        p.candidates = rendered;
        const auto req = build_prompt(ctx.templates, PromptShape::ClusterAll, p, l.text(), ctx.options,
                                      RequestTag{"cluster", "ALL", id_range(0, n), {}}, budget(ctx));
        auto parsed = std::get<ParsedAssignment>(ask_one(ctx, req, {PromptShape::ClusterAll, n, 0, {}}));
        result = repair_partition(n, std::move(parsed.clusters));
    } else {
        result.element_count = n;
        for (std::size_t i = 0; i < n; ++i) {
            PromptPayload p;
            p.element = rendered[i];
            for (const auto& c : result.clusters) {
                if (!p.context.empty()) p.context += "\n";
                p.context += "- " + c.label + " (e.g. ";
                for (std::size_t k = 0; k < c.members.size() && k < 2; ++k) {
                    p.context += (k ? " | " : "") + rendered[c.members[k]];
                }
                p.context += ")";
            }
            const auto req = build_prompt(ctx.templates, PromptShape::ClusterOne, p, l.text(), ctx.options,
                                          RequestTag{"cluster", "ONE", {i}, {}}, budget(ctx));
            auto parsed = std::get<ParsedAssignment>(ask_one(ctx, req, {PromptShape::ClusterOne, 1, 0, {}}));
            const std::string label(trim(parsed.clusters.front().label));
            auto it = std::find_if(result.clusters.begin(), result.clusters.end(),
                                   [&](const Cluster& c) { return c.label == label; });
            if (it == result.clusters.end()) {
                it = std::find_if(result.clusters.begin(), result.clusters.end(),
                                  [&](const Cluster& c) { return iequals(c.label, label); });
            }
            if (it == result.clusters.end()) {
                result.clusters.push_back(Cluster{label, {i}});
            } else {
                it->members.push_back(i);
            }
        }
    }
    for (const auto& w : result.warnings) ctx.events.push_back("cluster: " + w);
    return result;
}

}  // namespace

ClusterResult lro_cluster(OperatorContext& ctx, const Relation& r, Granularity g, const Requirement& l,
                          const Variant& v) {
    require_supported(LroKind::Cluster, g, v);
    if (g == Granularity::Table) fail(ErrorKind::Usage, "table-level cluster takes a database");
    return cluster_elements(ctx, render_all(extract_elements(r, g), ctx.options, RenderContext{&r, nullptr}), l, v);
}

ClusterResult lro_cluster(OperatorContext& ctx, const Database& db, const Requirement& l, const Variant& v) {
    require_supported(LroKind::Cluster, Granularity::Table, v);
    return cluster_elements(
        ctx, render_all(extract_elements(db, Granularity::Table), ctx.options, RenderContext{nullptr, &db}), l, v);
}

// ---------------------------------------------------------------------------
// Order

namespace {

/// Pairwise comparisons with a cache keyed by the unordered pair. Every
/// comparison is asked with the lower row index shown first.
class Comparator {
public:
    Comparator(OperatorContext& ctx, const std::vector<std::string>& rows, const Requirement& l, std::string variant)
        : ctx_(ctx), rows_(rows), l_(l), variant_(std::move(variant)) {}

    void ensure(const std::vector<std::pair<std::size_t, std::size_t>>& wanted) {
        std::vector<std::pair<std::size_t, std::size_t>> missing;
        std::set<std::pair<std::size_t, std::size_t>> queued;
        for (auto [a, b] : wanted) {
            const auto key = std::minmax(a, b);
            if (a == b || cache_.count(key) || !queued.insert(key).second) continue;
            missing.push_back(key);
        }
        if (missing.empty()) return;
        std::vector<ChatRequest> reqs;
        std::vector<ExpectedShape> shapes;
        for (auto [a, b] : missing) {
            PromptPayload p;
            p.element = rows_[a];
            p.second = rows_[b];
            reqs.push_back(build_prompt(ctx_.templates, PromptShape::OrderCompare, p, l_.text(), ctx_.options,
                                        RequestTag{"order", variant_, {a, b}, {}}, budget(ctx_)));
            shapes.push_back({PromptShape::OrderCompare, 2, 0, {}});
        }
        const auto parsed = ask(ctx_, reqs, shapes);
        for (std::size_t k = 0; k < missing.size(); ++k) cache_[missing[k]] = std::get<ParsedVerdict>(parsed[k]).value;
    }

    /// True when row a ranks before row b.
    bool before(std::size_t a, std::size_t b) const {
        const bool first = cache_.at(std::minmax(a, b));
        return a < b ? first : !first;
    }

    void sort(std::vector<std::size_t>& items) {
        if (items.size() <= 1) return;
        if (items.size() == 2) {
            ensure({{items[0], items[1]}});
            if (!before(items[0], items[1])) std::swap(items[0], items[1]);
            return;
        }
        const std::size_t a = items.front(), m = items[items.size() / 2], c = items.back();
        ensure({{a, m}, {a, c}, {m, c}});
        auto wins = [&](std::size_t x, std::size_t y, std::size_t z) { return int(before(x, y)) + int(before(x, z)); };
        std::size_t pivot = m;
        if (wins(m, a, c) != 1) {
            if (wins(a, m, c) == 1) {
                pivot = a;
            } else if (wins(c, a, m) == 1) {
                pivot = c;
            }
        }
        std::vector<std::pair<std::size_t, std::size_t>> wanted;
        for (auto e : items) {
            if (e != pivot) wanted.push_back({e, pivot});
        }
        ensure(wanted);
        std::vector<std::size_t> lo, hi;
        for (auto e : items) {
            if (e == pivot) continue;
            (before(e, pivot) ? lo : hi).push_back(e);
        }
        sort(lo);
        sort(hi);
        items = std::move(lo);
        items.push_back(pivot);
        items.insert(items.end(), hi.begin(), hi.end());
    }

private:
    OperatorContext& ctx_;
    const std::vector<std::string>& rows_;
    const Requirement& l_;
    std::string variant_;
    std::map<std::pair<std::size_t, std::size_t>, bool> cache_;
};

}  // namespace

std::vector<std::size_t> order_permutation(OperatorContext& ctx, const Relation& r, const Requirement& l,
                                           const Variant& v) {
    require_supported(LroKind::Order, Granularity::Row, v);
    const std::size_t n = r.row_count();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    if (n == 0) return perm;
    std::vector<std::string> rows;
    for (std::size_t i = 0; i < n; ++i) rows.push_back(render_row(r, i, ctx.options));

    switch (v.kind) {
        case Variant::Kind::All: {
            PromptPayload p;
            p.candidates = rows;
            const auto req = build_prompt(ctx.templates, PromptShape::OrderAll, p, l.text(), ctx.options,
                                          RequestTag{"order", "ALL", id_range(0, n), {}}, budget(ctx));
            auto ranking = std::get<ParsedRanking>(ask_one(ctx, req, {PromptShape::OrderAll, n, 0, {}}));
            if (!ranking.complete) {
                std::vector<bool> seen(n, false);
                for (auto i : ranking.order) seen[i] = true;
                std::size_t added = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (!seen[i]) {
                        ranking.order.push_back(i);
                        ++added;
                    }
                }
                ctx.events.push_back("order: ranking was incomplete; appended " + std::to_string(added) +
                                     " missing rows in input order");
            }
            return ranking.order;
        }
        case Variant::Kind::Pair: {
            Comparator cmp(ctx, rows, l, "PAIR");
            std::vector<std::pair<std::size_t, std::size_t>> all;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = i + 1; j < n; ++j) all.push_back({i, j});
            }
            cmp.ensure(all);
            std::vector<std::size_t> losses(n, 0);
            for (auto [i, j] : all) ++losses[cmp.before(i, j) ? j : i];
            std::stable_sort(perm.begin(), perm.end(), [&](auto a, auto b) { return losses[a] < losses[b]; });
            return perm;
        }
        case Variant::Kind::Sort: {
            Comparator cmp(ctx, rows, l, "SORT");
            cmp.sort(perm);
            return perm;
        }
        case Variant::Kind::Score: {
            std::vector<ChatRequest> reqs;
            std::vector<ExpectedShape> shapes;
            for (std::size_t i = 0; i < n; ++i) {
                PromptPayload p;
                p.element = rows[i];
                reqs.push_back(build_prompt(ctx.templates, PromptShape::OrderScore, p, l.text(), ctx.options,
                                            RequestTag{"order", "SCORE", {i}, {}}, budget(ctx)));
                shapes.push_back({PromptShape::OrderScore, 1, 0, {}});
            }
            const auto parsed = ask(ctx, reqs, shapes);
            std::vector<double> score(n);
            for (std::size_t i = 0; i < n; ++i) score[i] = std::get<ParsedScore>(parsed[i]).score;
            std::stable_sort(perm.begin(), perm.end(), [&](auto a, auto b) { return score[a] > score[b]; });
            return perm;
        }
        default: break;
    }
    return perm;
}

Relation lro_order(OperatorContext& ctx, const Relation& r, const Requirement& l, const Variant& v) {
    return apply_permutation(r, order_permutation(ctx, r, l, v));
}

}  // namespace lro
