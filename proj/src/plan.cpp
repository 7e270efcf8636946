#include "lro/plan.hpp"

#include "lro/error.hpp"
#include "plan_detail.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace lro {

using detail::iequals;

const char* to_string(CompareOp op) noexcept {
    switch (op) {
        case CompareOp::Eq: return "=";
        case CompareOp::Ne: return "!=";
        case CompareOp::Lt: return "<";
        case CompareOp::Le: return "<=";
        case CompareOp::Gt: return ">";
        case CompareOp::Ge: return ">=";
        case CompareOp::IsNull: return "IS NULL";
        case CompareOp::NotNull: return "IS NOT NULL";
    }
    return "?";
}

namespace detail {

std::optional<std::string> resolve_column(const std::vector<std::string>& columns, std::string_view name) {
    if (std::find(columns.begin(), columns.end(), name) != columns.end()) return std::string(name);
    const auto dot = name.find('.');
    if (dot != std::string_view::npos) {
        const auto bare = name.substr(dot + 1);
        if (std::find(columns.begin(), columns.end(), bare) != columns.end()) return std::string(bare);
    }
    return std::nullopt;
}

}  // namespace detail

std::string node_label(const PlanNode& node) {
    return std::visit(
        [](const auto& n) -> std::string {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, ScanNode>) return "Scan(" + n.relation + ")";
            if constexpr (std::is_same_v<T, ProjectNode>) return "Project";
            if constexpr (std::is_same_v<T, FilterNode>) return "Filter(" + n.column + " " + to_string(n.op) + ")";
            if constexpr (std::is_same_v<T, LroSelectNode>) return std::string("LLM_SELECT(") + to_string(n.g) + ")";
            if constexpr (std::is_same_v<T, LroMatchJoinNode>) return std::string("LLM_MATCH(") + to_string(n.g) + ")";
            if constexpr (std::is_same_v<T, LroImputeNode>) return std::string("LLM_IMPUTE(") + to_string(n.g) + ")";
            if constexpr (std::is_same_v<T, LroClusterNode>) return std::string("LLM_CLUSTER(") + to_string(n.g) + ")";
            if constexpr (std::is_same_v<T, LroOrderNode>) return "LLM_ORDER(row)";
            if constexpr (std::is_same_v<T, OrderByNode>) return "OrderBy(" + n.column + ")";
            if constexpr (std::is_same_v<T, GroupByNode>) return "GroupBy";
            if constexpr (std::is_same_v<T, LimitNode>) return "Limit(" + std::to_string(n.n) + ")";
        },
        node);
}

bool is_lro_node(const PlanNode& node) {
    return std::holds_alternative<LroSelectNode>(node) || std::holds_alternative<LroMatchJoinNode>(node) ||
           std::holds_alternative<LroImputeNode>(node) || std::holds_alternative<LroClusterNode>(node) ||
           std::holds_alternative<LroOrderNode>(node);
}

// ---------------------------------------------------------------------------
// Lexer

namespace {

enum class Tok { Ident, String, Number, Sym, End };

struct Token {
    Tok kind = Tok::End;
    std::string text;
    SourcePos pos;
};

[[noreturn]] void error_at(ErrorKind kind, const SourcePos& pos, const std::string& msg) {
    fail(kind, pos.to_string() + ": " + msg);
}

/// Quote families: 1 = single (' ‘ ’), 2 = double (" “ ”). Returns the family
/// and byte length of a quote starting at `i`, or {0, 0}.
std::pair<int, std::size_t> quote_at(std::string_view s, std::size_t i) {
    if (s[i] == '\'') return {1, 1};
    if (s[i] == '"') return {2, 1};
    if (i + 2 < s.size() && static_cast<unsigned char>(s[i]) == 0xE2 && static_cast<unsigned char>(s[i + 1]) == 0x80) {
        switch (static_cast<unsigned char>(s[i + 2])) {
            case 0x98:
            case 0x99: return {1, 3};
            case 0x9C:
            case 0x9D: return {2, 3};
            default: break;
        }
    }
    return {0, 0};
}

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    std::vector<Token> run() {
        std::vector<Token> out;
        for (;;) {
            skip_space();
            if (i_ >= src_.size()) {
                out.push_back({Tok::End, "", pos_});
                return out;
            }
            out.push_back(next());
        }
    }

private:
    void advance(std::size_t n = 1) {
        for (std::size_t k = 0; k < n && i_ < src_.size(); ++k, ++i_) {
            const auto c = static_cast<unsigned char>(src_[i_]);
            if (c == '\n') {
                ++pos_.line;
                pos_.column = 1;
            } else if ((c & 0xC0) != 0x80) {
                ++pos_.column;
            }
        }
    }

    void skip_space() {
        while (i_ < src_.size()) {
            const char c = src_[i_];
            if (std::isspace(static_cast<unsigned char>(c))) {
                advance();
            } else if (c == '-' && i_ + 1 < src_.size() && src_[i_ + 1] == '-') {
                while (i_ < src_.size() && src_[i_] != '\n') advance();
            } else {
                break;
            }
        }
    }

    static bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
    static bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

    Token next() {
        const SourcePos start = pos_;
        const char c = src_[i_];
        if (auto [family, len] = quote_at(src_, i_); family) return string(start, family, len);
        if (c == '`') {
            advance();
            std::string text;
            while (i_ < src_.size() && src_[i_] != '`') {
                text += src_[i_];
                advance();
            }
            if (i_ >= src_.size()) error_at(ErrorKind::Parse, start, "unterminated quoted identifier");
            advance();
            return {Tok::Ident, text, start};
        }
        if (ident_start(c)) {
            std::string text;
            while (i_ < src_.size()) {
                if (ident_char(src_[i_])) {
                    text += src_[i_];
                    advance();
                } else if (src_[i_] == '.' && i_ + 1 < src_.size() && ident_start(src_[i_ + 1])) {
                    text += '.';
                    advance();
                } else {
                    break;
                }
            }
            return {Tok::Ident, text, start};
        }
        const bool neg = c == '-' && i_ + 1 < src_.size() && std::isdigit(static_cast<unsigned char>(src_[i_ + 1]));
        if (std::isdigit(static_cast<unsigned char>(c)) || neg) {
            std::string text(1, c);
            advance();
            bool dot = false;
            while (i_ < src_.size() &&
                   (std::isdigit(static_cast<unsigned char>(src_[i_])) || (src_[i_] == '.' && !dot))) {
                dot = dot || src_[i_] == '.';
                text += src_[i_];
                advance();
            }
            return {Tok::Number, text, start};
        }
        for (const char* sym : {"!=", "<>", "<=", ">="}) {
            if (src_.substr(i_, 2) == sym) {
                advance(2);
                return {Tok::Sym, std::string(sym) == "<>" ? "!=" : sym, start};
            }
        }
        if (std::string_view("(),*;=<>").find(c) != std::string_view::npos) {
            advance();
            return {Tok::Sym, std::string(1, c), start};
        }
        error_at(ErrorKind::Parse, start, std::string("unexpected character '") + c + "'");
    }

    Token string(SourcePos start, int family, std::size_t open_len) {
        advance(open_len);
        std::string text;
        for (;;) {
            if (i_ >= src_.size()) error_at(ErrorKind::Parse, start, "unterminated string literal");
            if (src_[i_] == '\\' && i_ + 1 < src_.size()) {
                const char e = src_[i_ + 1];
                switch (e) {
                    case 'n': text += '\n'; break;
                    case 't': text += '\t'; break;
                    default: text += e; break;
                }
                advance(2);
                continue;
            }
            if (auto [f, len] = quote_at(src_, i_); f == family) {
                advance(len);
                return {Tok::String, text, start};
            }
            text += src_[i_];
            advance();
        }
    }

    std::string_view src_;
    std::size_t i_ = 0;
    SourcePos pos_;
};

// ---------------------------------------------------------------------------
// Parser

class Parser {
public:
    explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

    Plan run() {
        const auto& t = peek();
        if (t.kind == Tok::Ident && iequals(t.text, "SELECT")) {
            sql();
        } else if (t.kind == Tok::Ident && detail::upper(t.text).rfind("LLM_", 0) == 0) {
            standalone();
        } else {
            error_at(ErrorKind::Parse, t.pos, "expected SELECT or an LLM_ call, found " + describe(t));
        }
        accept_sym(";");
        if (peek().kind != Tok::End) error_at(ErrorKind::Parse, peek().pos, "unexpected " + describe(peek()));
        return std::move(plan_);
    }

private:
    // -- token helpers

    const Token& peek(std::size_t ahead = 0) const { return toks_[std::min(i_ + ahead, toks_.size() - 1)]; }
    const Token& take() {
        const Token& t = toks_[i_];
        if (i_ + 1 < toks_.size()) ++i_;
        return t;
    }

    static std::string describe(const Token& t) {
        switch (t.kind) {
            case Tok::End: return "end of input";
            case Tok::String: return "string '" + t.text + "'";
            default: return "'" + t.text + "'";
        }
    }

    bool is_sym(const char* s, std::size_t ahead = 0) const {
        return peek(ahead).kind == Tok::Sym && peek(ahead).text == s;
    }
    bool is_kw(const char* kw, std::size_t ahead = 0) const {
        return peek(ahead).kind == Tok::Ident && iequals(peek(ahead).text, kw);
    }
    bool accept_sym(const char* s) {
        if (!is_sym(s)) return false;
        take();
        return true;
    }
    bool accept_kw(const char* kw) {
        if (!is_kw(kw)) return false;
        take();
        return true;
    }
    void expect_sym(const char* s) {
        if (!accept_sym(s)) error_at(ErrorKind::Parse, peek().pos, std::string("expected '") + s + "', found " + describe(peek()));
    }
    void expect_kw(const char* kw) {
        if (!accept_kw(kw)) error_at(ErrorKind::Parse, peek().pos, std::string("expected ") + kw + ", found " + describe(peek()));
    }
    const Token& expect(Tok kind, const char* what) {
        if (peek().kind != kind) error_at(ErrorKind::Parse, peek().pos, std::string("expected ") + what + ", found " + describe(peek()));
        return take();
    }
    /// Identifier or string literal (column and relation names).
    const Token& name(const char* what) {
        if (peek().kind != Tok::Ident && peek().kind != Tok::String) {
            error_at(ErrorKind::Parse, peek().pos, std::string("expected ") + what + ", found " + describe(peek()));
        }
        return take();
    }

    Granularity granularity() {
        const auto& t = expect(Tok::String, "a granularity literal");
        auto g = parse_granularity(t.text);
        if (!g) {
            error_at(ErrorKind::Parse, t.pos,
                     "invalid granularity literal '" + t.text + "' (expected cell, row, column or table)");
        }
        return *g;
    }

    std::string requirement() {
        const auto& t = expect(Tok::String, "a requirement string");
        if (detail::trim(t.text).empty()) error_at(ErrorKind::Usage, t.pos, "requirement must not be empty");
        return t.text;
    }

    /// Optional trailing ", 'VARIANT'" before the closing parenthesis.
    std::optional<Variant> variant() {
        if (!is_sym(",")) return std::nullopt;
        take();
        const auto& t = expect(Tok::String, "a variant literal");
        auto v = parse_variant(t.text);
        if (!v) error_at(ErrorKind::Parse, t.pos, "invalid variant '" + t.text + "'");
        return v;
    }

    void check(LroKind kind, Granularity g, const std::optional<Variant>& v, const SourcePos& pos) {
        try {
            if (v) {
                require_supported(kind, g, *v);
            } else if (!is_supported(kind, g)) {
                require_supported(kind, g, Variant::all());
            }
        } catch (const Error& e) {
            error_at(e.kind(), pos, e.what());
        }
    }

    void push(PlanNode node, SourcePos pos) {
        plan_.nodes.push_back(std::move(node));
        plan_.positions.push_back(pos);
    }

    // -- standalone form

    void standalone() {
        const Token fn = take();
        const std::string f = detail::upper(fn.text);
        expect_sym("(");
        if (f == "LLM_SELECT" || f == "LLM_CLUSTER") {
            const auto [rel, rel_pos] = source();
            expect_sym(",");
            const auto gpos = peek().pos;
            const auto g = granularity();
            expect_sym(",");
            auto l = requirement();
            auto v = variant();
            const auto kind = f == "LLM_SELECT" ? LroKind::Select : LroKind::Cluster;
            check(kind, g, v, gpos);
            table_source(g, rel, rel_pos);
            push(ScanNode{rel}, rel_pos);
            if (kind == LroKind::Select) {
                push(LroSelectNode{g, std::move(l), v}, fn.pos);
            } else {
                push(LroClusterNode{g, std::move(l), v}, fn.pos);
            }
        } else if (f == "LLM_ORDER") {
            const auto [rel, rel_pos] = source();
            expect_sym(",");
            const auto gpos = peek().pos;
            const auto g = granularity();
            expect_sym(",");
            auto l = requirement();
            auto v = variant();
            check(LroKind::Order, g, v, gpos);
            table_source(g, rel, rel_pos);
            push(ScanNode{rel}, rel_pos);
            push(LroOrderNode{std::move(l), v}, fn.pos);
        } else if (f == "LLM_IMPUTE") {
            const auto [rel, rel_pos] = source();
            expect_sym(",");
            const auto gpos = peek().pos;
            const auto g = granularity();
            LroImputeNode node;
            node.g = g;
            if (g == Granularity::Column) {
                expect_sym(",");
                node.new_column = name("a new column name").text;
            } else if (g == Granularity::Row) {
                expect_sym(",");
                const auto& n = expect(Tok::Number, "a row count");
                node.rows = count(n);
            }
            expect_sym(",");
            node.requirement = requirement();
            node.variant = variant();
            check(LroKind::Impute, g, node.variant, gpos);
            table_source(g, rel, rel_pos);
            push(ScanNode{rel}, rel_pos);
            push(std::move(node), fn.pos);
        } else if (f == "LLM_MATCH") {
            const auto [left, left_pos] = source();
            expect_sym(",");
            const auto& right = name("a relation name");
            expect_sym(",");
            const auto gpos = peek().pos;
            LroMatchJoinNode node;
            node.other = right.text;
            node.g = granularity();
            if (node.g == Granularity::Cell) {
                expect_sym(",");
                node.left_key = name("the left key column").text;
                expect_sym(",");
                node.right_key = name("the right key column").text;
            }
            expect_sym(",");
            node.requirement = requirement();
            node.variant = variant();
            check(LroKind::Match, node.g, node.variant, gpos);
            table_source(node.g, left, left_pos);
            push(ScanNode{left}, left_pos);
            push(std::move(node), fn.pos);
        } else {
            error_at(ErrorKind::Parse, fn.pos, "unknown function " + fn.text);
        }
        expect_sym(")");
    }

    std::pair<std::string, SourcePos> source() {
        const auto pos = peek().pos;
        if (accept_sym("*")) return {"*", pos};
        return {name("a relation name").text, pos};
    }

    static void table_source(Granularity g, const std::string& rel, const SourcePos& pos) {
        if (g == Granularity::Table && rel != "*") {
            error_at(ErrorKind::Usage, pos, "table granularity ranges over the database; use * as the source");
        }
        if (g != Granularity::Table && rel == "*") {
            error_at(ErrorKind::Usage, pos, std::string("* is only valid for table granularity, not ") + to_string(g));
        }
    }

    static std::size_t count(const Token& t) {
        if (t.text.find_first_not_of("0123456789") != std::string::npos || t.text.size() > 9) {
            error_at(ErrorKind::Parse, t.pos, "expected a non-negative integer, found " + t.text);
        }
        return static_cast<std::size_t>(std::stoul(t.text));
    }

    // -- SQL form

    struct Item {
        enum Kind { Star, Column, Count, Impute, Cluster } kind;
        std::string column;
        PlanNode node;  // Impute / Cluster
        SourcePos pos;
    };

    void sql() {
        const auto select_pos = take().pos;
        std::vector<Item> items;
        do {
            items.push_back(item());
        } while (accept_sym(","));

        expect_kw("FROM");
        const auto& from = name("a relation name");
        push(ScanNode{from.text}, from.pos);

        if (is_kw("JOIN")) join(from.text);

        std::vector<std::pair<PlanNode, SourcePos>> classical, semantic;
        if (accept_kw("WHERE")) {
            do {
                predicate(classical, semantic);
            } while (accept_kw("AND"));
        }
        for (auto& [n, p] : classical) push(std::move(n), p);
        for (auto& [n, p] : semantic) push(std::move(n), p);

        bool star = false, has_count = false;
        std::set<std::string> map_columns;
        for (auto& it : items) {
            if (it.kind == Item::Star) {
                if (star) error_at(ErrorKind::Parse, it.pos, "'*' listed twice");
                star = true;
            }
            if (it.kind == Item::Count) has_count = true;
            if (it.kind == Item::Impute || it.kind == Item::Cluster) {
                if (!map_columns.insert(it.column).second) {
                    error_at(ErrorKind::Parse, it.pos, "column '" + it.column + "' is produced twice");
                }
                push(it.node, it.pos);
            }
        }
        for (const auto& it : items) {
            if (star && it.kind == Item::Column) {
                error_at(ErrorKind::Parse, it.pos, "cannot mix '*' with plain column names");
            }
        }

        std::optional<std::vector<std::string>> group_keys;
        if (is_kw("GROUP")) {
            const auto pos = take().pos;
            expect_kw("BY");
            if (is_kw("LLM_CLUSTER")) {
                const auto fpos = take().pos;
                if (map_columns.count(detail::kClusterColumn)) {
                    error_at(ErrorKind::Parse, fpos, "cluster labels are already produced in the select list");
                }
                expect_sym("(");
                const auto gpos = peek().pos;
                const auto g = granularity();
                expect_sym(",");
                auto l = requirement();
                auto v = variant();
                expect_sym(")");
                check(LroKind::Cluster, g, v, gpos);
                if (g != Granularity::Row) error_at(ErrorKind::Usage, gpos, "GROUP BY LLM_CLUSTER must be row-wise");
                push(LroClusterNode{g, std::move(l), v}, fpos);
                group_keys = std::vector<std::string>{detail::kClusterColumn};
            } else {
                group_keys.emplace();
                do {
                    group_keys->push_back(name("a grouping column").text);
                } while (accept_sym(","));
            }
            push(GroupByNode{*group_keys, has_count}, pos);
            for (const auto& it : items) {
                if (it.kind == Item::Column &&
                    std::find(group_keys->begin(), group_keys->end(), it.column) == group_keys->end()) {
                    error_at(ErrorKind::Parse, it.pos, "column '" + it.column + "' is neither a grouping key nor COUNT(*)");
                }
                if (it.kind == Item::Impute || it.kind == Item::Cluster) {
                    error_at(ErrorKind::Parse, it.pos, "LLM calls in the select list cannot be combined with GROUP BY");
                }
            }
        } else if (has_count) {
            error_at(ErrorKind::Parse, select_pos, "COUNT(*) requires GROUP BY");
        }

        if (is_kw("ORDER")) {
            const auto pos = take().pos;
            expect_kw("BY");
            if (is_kw("LLM_ORDER")) {
                const auto fpos = take().pos;
                expect_sym("(");
                const auto gpos = peek().pos;
                const auto g = granularity();
                expect_sym(",");
                auto l = requirement();
                auto v = variant();
                expect_sym(")");
                check(LroKind::Order, g, v, gpos);
                push(LroOrderNode{std::move(l), v}, fpos);
            } else {
                const auto& col = name("an ordering column");
                bool desc = false;
                if (accept_kw("DESC")) {
                    desc = true;
                } else {
                    accept_kw("ASC");
                }
                push(OrderByNode{col.text, desc}, pos);
            }
        }

        if (!star) {
            ProjectNode project;
            for (const auto& it : items) {
                project.columns.push_back(it.kind == Item::Count ? std::string(detail::kCountColumn) : it.column);
            }
            push(std::move(project), select_pos);
        }

        if (is_kw("LIMIT")) {
            const auto pos = take().pos;
            push(LimitNode{count(expect(Tok::Number, "a row limit"))}, pos);
        }
    }

    Item item() {
        const auto pos = peek().pos;
        if (accept_sym("*")) return {Item::Star, "", ScanNode{}, pos};
        if (is_kw("COUNT") && is_sym("(", 1)) {
            take();
            take();
            expect_sym("*");
            expect_sym(")");
            return {Item::Count, detail::kCountColumn, ScanNode{}, pos};
        }
        if (is_kw("LLM_IMPUTE")) {
            take();
            expect_sym("(");
            const auto gpos = peek().pos;
            const auto g = granularity();
            if (g != Granularity::Column) {
                error_at(ErrorKind::Usage, gpos, "only column-wise LLM_IMPUTE may appear in the select list");
            }
            expect_sym(",");
            LroImputeNode node;
            node.g = g;
            node.new_column = name("a new column name").text;
            expect_sym(",");
            node.requirement = requirement();
            node.variant = variant();
            expect_sym(")");
            check(LroKind::Impute, g, node.variant, gpos);
            std::string col = node.new_column;
            return {Item::Impute, std::move(col), std::move(node), pos};
        }
        if (is_kw("LLM_CLUSTER")) {
            take();
            expect_sym("(");
            const auto gpos = peek().pos;
            const auto g = granularity();
            expect_sym(",");
            auto l = requirement();
            auto v = variant();
            expect_sym(")");
            check(LroKind::Cluster, g, v, gpos);
            if (g != Granularity::Row) error_at(ErrorKind::Usage, gpos, "only row-wise LLM_CLUSTER may appear in the select list");
            return {Item::Cluster, detail::kClusterColumn, LroClusterNode{g, std::move(l), v}, pos};
        }
        if (peek().kind == Tok::Ident && detail::upper(peek().text).rfind("LLM_", 0) == 0 && is_sym("(", 1)) {
            error_at(ErrorKind::Parse, pos, peek().text + " is not allowed in the select list");
        }
        return {Item::Column, name("a column name").text, ScanNode{}, pos};
    }

    void join(const std::string& left) {
        take();
        const auto& right = name("a relation name");
        expect_kw("ON");
        if (!is_kw("LLM_MATCH")) error_at(ErrorKind::Parse, peek().pos, "JOIN ... ON expects LLM_MATCH(...)");
        const auto fpos = take().pos;
        expect_sym("(");
        const auto gpos = peek().pos;
        LroMatchJoinNode node;
        node.other = right.text;
        node.g = granularity();
        if (node.g == Granularity::Cell) {
            expect_sym(",");
            node.left_key = strip(name("the left key column").text, left);
            expect_sym(",");
            node.right_key = strip(name("the right key column").text, right.text);
        }
        expect_sym(",");
        node.requirement = requirement();
        node.variant = variant();
        expect_sym(")");
        check(LroKind::Match, node.g, node.variant, gpos);
        if (node.g == Granularity::Column) error_at(ErrorKind::Usage, gpos, "JOIN needs a cell- or row-wise LLM_MATCH");
        push(std::move(node), fpos);
    }

    static std::string strip(const std::string& key, const std::string& rel) {
        const std::string prefix = rel + ".";
        return key.rfind(prefix, 0) == 0 ? key.substr(prefix.size()) : key;
    }

    void predicate(std::vector<std::pair<PlanNode, SourcePos>>& classical,
                   std::vector<std::pair<PlanNode, SourcePos>>& semantic) {
        const auto pos = peek().pos;
        if (is_kw("LLM_SELECT")) {
            take();
            expect_sym("(");
            const auto gpos = peek().pos;
            const auto g = granularity();
            expect_sym(",");
            auto l = requirement();
            auto v = variant();
            expect_sym(")");
            check(LroKind::Select, g, v, gpos);
            if (g != Granularity::Row) error_at(ErrorKind::Usage, gpos, "LLM_SELECT in WHERE must be row-wise");
            semantic.push_back({LroSelectNode{g, std::move(l), v}, pos});
            return;
        }
        if (peek().kind == Tok::Ident && detail::upper(peek().text).rfind("LLM_", 0) == 0 && is_sym("(", 1)) {
            error_at(ErrorKind::Parse, pos, peek().text + " is not allowed in WHERE");
        }
        const auto& col = name("a column name");
        FilterNode f{col.text, CompareOp::Eq, ""};
        if (accept_kw("IS")) {
            f.op = accept_kw("NOT") ? CompareOp::NotNull : CompareOp::IsNull;
            expect_kw("NULL");
        } else {
            const auto& op = expect(Tok::Sym, "a comparison operator");
            static const std::pair<const char*, CompareOp> ops[] = {{"=", CompareOp::Eq},  {"!=", CompareOp::Ne},
                                                                    {"<", CompareOp::Lt},  {"<=", CompareOp::Le},
                                                                    {">", CompareOp::Gt},  {">=", CompareOp::Ge}};
            auto it = std::find_if(std::begin(ops), std::end(ops), [&](const auto& p) { return op.text == p.first; });
            if (it == std::end(ops)) error_at(ErrorKind::Parse, op.pos, "expected a comparison operator, found '" + op.text + "'");
            f.op = it->second;
            if (peek().kind != Tok::String && peek().kind != Tok::Number) {
                error_at(ErrorKind::Parse, peek().pos, "expected a literal, found " + describe(peek()));
            }
            f.literal = take().text;
        }
        classical.push_back({std::move(f), pos});
    }

    std::vector<Token> toks_;
    std::size_t i_ = 0;
    Plan plan_;
};

}  // namespace

Plan parse_plan(std::string_view text) { return Parser(Lexer(text).run()).run(); }

Plan parse_plan(std::string_view text, const Database& db) {
    auto plan = parse_plan(text);
    validate_plan(plan, db);
    return plan;
}

// ---------------------------------------------------------------------------
// Validation

void validate_plan(const Plan& plan, const Database& db) {
    if (plan.nodes.empty() || !std::holds_alternative<ScanNode>(plan.nodes.front())) {
        fail(ErrorKind::Usage, "plan must start with a scan");
    }
    auto pos = [&](std::size_t k) { return k < plan.positions.size() ? plan.positions[k] : SourcePos{}; };
    // nullopt: columns only known at run time (after a column-wise select).
    std::optional<std::vector<std::string>> schema;
    bool database = false;
    auto need = [&](std::size_t k, const std::string& col) -> std::string {
        if (!schema) return col;
        auto r = detail::resolve_column(*schema, col);
        if (!r) error_at(ErrorKind::Domain, pos(k), "unknown column '" + col + "'");
        return *r;
    };

    for (std::size_t k = 0; k < plan.nodes.size(); ++k) {
        const auto& node = plan.nodes[k];
        if (k > 0 && std::holds_alternative<ScanNode>(node)) error_at(ErrorKind::Usage, pos(k), "scan must come first");
        if (database && k > 1) error_at(ErrorKind::Usage, pos(k), "a database-wide operator must be the only operator");
        std::visit(
            [&](const auto& n) {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, ScanNode>) {
                    if (n.relation == "*") {
                        database = true;
                        return;
                    }
                    const auto* r = db.find(n.relation);
                    if (!r) error_at(ErrorKind::Domain, pos(k), "unknown relation '" + n.relation + "'");
                    schema = r->columns();
                } else if constexpr (std::is_same_v<T, FilterNode>) {
                    need(k, n.column);
                } else if constexpr (std::is_same_v<T, LroSelectNode>) {
                    if (n.g == Granularity::Column) schema.reset();
                    if (n.g == Granularity::Table) schema = std::vector<std::string>{"table"};
                } else if constexpr (std::is_same_v<T, LroMatchJoinNode>) {
                    const auto* other = db.find(n.other);
                    if (!other) error_at(ErrorKind::Domain, pos(k), "unknown relation '" + n.other + "'");
                    if (n.g == Granularity::Cell) {
                        need(k, n.left_key);
                        if (!detail::resolve_column(other->columns(), n.right_key)) {
                            error_at(ErrorKind::Domain, pos(k), "unknown column '" + n.right_key + "' in '" + n.other + "'");
                        }
                    }
                    if (n.g == Granularity::Column) {
                        schema = std::vector<std::string>{"left_column", "right_column"};
                    } else if (schema) {
                        std::set<std::string> taken(schema->begin(), schema->end());
                        for (const auto& c : other->columns()) schema->push_back(taken.count(c) ? n.other + "." + c : c);
                    }
                } else if constexpr (std::is_same_v<T, LroImputeNode>) {
                    if (n.g == Granularity::Column && schema) {
                        if (detail::resolve_column(*schema, n.new_column) &&
                            std::find(schema->begin(), schema->end(), n.new_column) != schema->end()) {
                            error_at(ErrorKind::Domain, pos(k), "column '" + n.new_column + "' already exists");
                        }
                        schema->push_back(n.new_column);
                    }
                } else if constexpr (std::is_same_v<T, LroClusterNode>) {
                    if (n.g == Granularity::Row) {
                        if (schema) {
                            if (std::find(schema->begin(), schema->end(), detail::kClusterColumn) != schema->end()) {
                                error_at(ErrorKind::Domain, pos(k), "column 'cluster' already exists");
                            }
                            schema->push_back(detail::kClusterColumn);
                        }
                    } else {
                        schema = std::vector<std::string>{n.g == Granularity::Table ? "table" : "column",
                                                          detail::kClusterColumn};
                    }
                } else if constexpr (std::is_same_v<T, OrderByNode>) {
                    need(k, n.column);
                } else if constexpr (std::is_same_v<T, GroupByNode>) {
                    std::vector<std::string> out;
                    for (const auto& key : n.keys) out.push_back(need(k, key));
                    if (n.with_count) out.push_back(detail::kCountColumn);
                    schema = std::move(out);
                } else if constexpr (std::is_same_v<T, ProjectNode>) {
                    std::vector<std::string> out;
                    for (const auto& c : n.columns) out.push_back(need(k, c));
                    if (schema) schema = std::move(out);
                }
            },
            node);
    }
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

std::string quote(std::string_view s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'' || c == '\\') out += '\\';
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        if (c == '\t') {
            out += "\\t";
            continue;
        }
        out += c;
    }
    return out + "'";
}

bool plain_ident(std::string_view s) {
    if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') continue;
        if (c == '.' && i + 1 < s.size() && (std::isalpha(static_cast<unsigned char>(s[i + 1])) || s[i + 1] == '_')) continue;
        return false;
    }
    static const char* reserved[] = {"SELECT", "FROM", "WHERE", "AND", "JOIN", "ON", "GROUP", "BY", "ORDER",
                                     "LIMIT", "ASC", "DESC", "IS", "NOT", "NULL", "COUNT"};
    for (const char* r : reserved) {
        if (iequals(s, r)) return false;
    }
    return true;
}

std::string ident(std::string_view s) { return plain_ident(s) ? std::string(s) : "`" + std::string(s) + "`"; }

std::string variant_suffix(const std::optional<Variant>& v) { return v ? ", " + quote(v->to_string()) : ""; }

std::string gran(Granularity g) { return quote(to_string(g)); }

std::string literal(std::string_view s) {
    auto n = parse_number(s);
    if (n && !s.empty() && (std::isdigit(static_cast<unsigned char>(s[0])) || s[0] == '-') &&
        s.find_first_not_of("-0123456789.") == std::string_view::npos && s.back() != '.') {
        return std::string(s);
    }
    return quote(s);
}

std::string render_standalone(const ScanNode& scan, const PlanNode& node) {
    const std::string src = scan.relation == "*" ? "*" : ident(scan.relation);
    return std::visit(
        [&](const auto& n) -> std::string {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, LroSelectNode>) {
                return "LLM_SELECT(" + src + ", " + gran(n.g) + ", " + quote(n.requirement) + variant_suffix(n.variant) + ")";
            } else if constexpr (std::is_same_v<T, LroClusterNode>) {
                return "LLM_CLUSTER(" + src + ", " + gran(n.g) + ", " + quote(n.requirement) + variant_suffix(n.variant) + ")";
            } else if constexpr (std::is_same_v<T, LroOrderNode>) {
                return "LLM_ORDER(" + src + ", 'row', " + quote(n.requirement) + variant_suffix(n.variant) + ")";
            } else if constexpr (std::is_same_v<T, LroImputeNode>) {
                std::string mid;
                if (n.g == Granularity::Column) mid = ", " + quote(n.new_column);
                if (n.g == Granularity::Row) mid = ", " + std::to_string(n.rows);
                return "LLM_IMPUTE(" + src + ", " + gran(n.g) + mid + ", " + quote(n.requirement) + variant_suffix(n.variant) + ")";
            } else if constexpr (std::is_same_v<T, LroMatchJoinNode>) {
                std::string keys;
                if (n.g == Granularity::Cell) keys = ", " + quote(n.left_key) + ", " + quote(n.right_key);
                return "LLM_MATCH(" + src + ", " + ident(n.other) + ", " + gran(n.g) + keys + ", " + quote(n.requirement) +
                       variant_suffix(n.variant) + ")";
            } else {
                return "";
            }
        },
        node);
}

}  // namespace

std::string render_plan(const Plan& plan) {
    if (plan.nodes.empty() || !std::holds_alternative<ScanNode>(plan.nodes.front())) {
        fail(ErrorKind::Usage, "plan must start with a scan");
    }
    const auto& scan = std::get<ScanNode>(plan.nodes.front());
    if (plan.nodes.size() == 2 && is_lro_node(plan.nodes[1])) {
        return render_standalone(scan, plan.nodes[1]) + ";";
    }

    std::string from = ident(scan.relation), join, group, order, limit;
    std::vector<std::string> where;
    const ProjectNode* project = nullptr;
    const GroupByNode* grouping = nullptr;
    std::vector<std::pair<std::string, std::string>> map_items;  // output column, call text
    for (std::size_t k = 1; k < plan.nodes.size(); ++k) {
        const auto& node = plan.nodes[k];
        const bool next_groups = k + 1 < plan.nodes.size() && std::holds_alternative<GroupByNode>(plan.nodes[k + 1]);
        std::visit(
            [&](const auto& n) {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, LroMatchJoinNode>) {
                    std::string keys;
                    if (n.g == Granularity::Cell) {
                        keys = ", " + ident(scan.relation + "." + n.left_key) + ", " + ident(n.other + "." + n.right_key);
                    }
                    join = " JOIN " + ident(n.other) + " ON LLM_MATCH(" + gran(n.g) + keys + ", " + quote(n.requirement) +
                           variant_suffix(n.variant) + ")";
                } else if constexpr (std::is_same_v<T, FilterNode>) {
                    if (n.op == CompareOp::IsNull || n.op == CompareOp::NotNull) {
                        where.push_back(ident(n.column) + " " + to_string(n.op));
                    } else {
                        where.push_back(ident(n.column) + " " + to_string(n.op) + " " + literal(n.literal));
                    }
                } else if constexpr (std::is_same_v<T, LroSelectNode>) {
                    where.push_back("LLM_SELECT(" + gran(n.g) + ", " + quote(n.requirement) + variant_suffix(n.variant) + ")");
                } else if constexpr (std::is_same_v<T, LroImputeNode>) {
                    map_items.push_back({n.new_column, "LLM_IMPUTE(" + gran(n.g) + ", " + quote(n.new_column) + ", " +
                                                           quote(n.requirement) + variant_suffix(n.variant) + ")"});
                } else if constexpr (std::is_same_v<T, LroClusterNode>) {
                    const std::string call =
                        "LLM_CLUSTER(" + gran(n.g) + ", " + quote(n.requirement) + variant_suffix(n.variant) + ")";
                    if (next_groups) {
                        group = " GROUP BY " + call;
                    } else {
                        map_items.push_back({detail::kClusterColumn, call});
                    }
                } else if constexpr (std::is_same_v<T, GroupByNode>) {
                    grouping = &n;
                    if (group.empty()) {
                        group = " GROUP BY ";
                        for (std::size_t i = 0; i < n.keys.size(); ++i) group += (i ? ", " : "") + ident(n.keys[i]);
                    }
                } else if constexpr (std::is_same_v<T, LroOrderNode>) {
                    order = " ORDER BY LLM_ORDER('row', " + quote(n.requirement) + variant_suffix(n.variant) + ")";
                } else if constexpr (std::is_same_v<T, OrderByNode>) {
                    order = " ORDER BY " + ident(n.column) + (n.descending ? " DESC" : " ASC");
                } else if constexpr (std::is_same_v<T, ProjectNode>) {
                    project = &n;
                } else if constexpr (std::is_same_v<T, LimitNode>) {
                    limit = " LIMIT " + std::to_string(n.n);
                }
            },
            node);
    }

    std::vector<std::string> items;
    if (project) {
        for (const auto& c : project->columns) {
            auto it = std::find_if(map_items.begin(), map_items.end(), [&](const auto& m) { return m.first == c; });
            if (it != map_items.end()) {
                items.push_back(it->second);
            } else if (grouping && grouping->with_count && c == detail::kCountColumn) {
                items.push_back("COUNT(*)");
            } else {
                items.push_back(ident(c));
            }
        }
    } else {
        items.push_back("*");
        for (const auto& m : map_items) items.push_back(m.second);
        if (grouping && grouping->with_count) items.push_back("COUNT(*)");
    }

    std::string out = "SELECT ";
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
    out += " FROM " + from + join;
    for (std::size_t i = 0; i < where.size(); ++i) out += (i ? " AND " : " WHERE ") + where[i];
    return out + group + order + limit + ";";
}

bool plan_is_order_sensitive(const Plan& plan) {
    bool ordered = false;
    for (const auto& n : plan.nodes) {
        if (std::holds_alternative<LroOrderNode>(n) || std::holds_alternative<OrderByNode>(n)) ordered = true;
        if (std::holds_alternative<GroupByNode>(n)) ordered = false;
    }
    return ordered;
}

std::size_t plan_lro_count(const Plan& plan) {
    return static_cast<std::size_t>(std::count_if(plan.nodes.begin(), plan.nodes.end(), is_lro_node));
}

}  // namespace lro
