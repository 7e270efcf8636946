#include "lro/error.hpp"
#include "lro/plan.hpp"
#include "plan_detail.hpp"

#include "json.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace lro {

namespace {

using detail::resolve_column;

std::string column_in(const Relation& r, const std::string& name) {
    auto c = resolve_column(r.columns(), name);
    if (!c) fail(ErrorKind::Domain, "unknown column '" + name + "' in '" + r.name() + "'");
    return *c;
}

bool keep(const Cell& cell, CompareOp op, const std::string& literal) {
    if (op == CompareOp::IsNull) return !cell;
    if (op == CompareOp::NotNull) return cell.has_value();
    if (!cell) return false;
    const int c = compare_cells(cell, Cell{literal});
    switch (op) {
        case CompareOp::Eq: return c == 0;
        case CompareOp::Ne: return c != 0;
        case CompareOp::Lt: return c < 0;
        case CompareOp::Le: return c <= 0;
        case CompareOp::Gt: return c > 0;
        case CompareOp::Ge: return c >= 0;
        default: return false;
    }
}

/// Running value of the pipeline: a relation, or the whole database after a "*" scan.
struct State {
    std::optional<Relation> rel;
    const Database* db = nullptr;

    const Relation& relation() const {
        if (!rel) fail(ErrorKind::Usage, "operator needs a relation, not the whole database");
        return *rel;
    }
    std::size_t size() const { return rel ? rel->row_count() : (db ? db->size() : 0); }
};

std::vector<std::string> right_columns(const Relation& left, const Relation& right) {
    std::set<std::string> taken(left.columns().begin(), left.columns().end());
    std::vector<std::string> out;
    for (const auto& c : right.columns()) {
        std::string name = taken.count(c) ? right.name() + "." + c : c;
        if (!taken.insert(name).second) fail(ErrorKind::Domain, "join output column '" + name + "' is ambiguous");
        out.push_back(std::move(name));
    }
    return out;
}

Relation cluster_relation(const std::string& first, const std::vector<std::string>& names, const ClusterResult& c) {
    const auto labels = c.labels();
    std::vector<Row> rows;
    for (std::size_t i = 0; i < names.size(); ++i) rows.push_back({names[i], labels[i]});
    return Relation("clusters", {first, detail::kClusterColumn}, std::move(rows));
}

class Executor {
public:
    Executor(const Database& db, Engine& engine) : db_(db), engine_(engine), ctx_(engine.gateway, engine.templates, engine.options) {
        ctx_.allow_degrade = engine.allow_degrade;
    }

    std::vector<std::string>& events() { return ctx_.events; }

    std::string run(const PlanNode& node, State& s) {
        return std::visit([&](const auto& n) { return apply(n, s); }, node);
    }

private:
    template <class N>
    Variant resolve(const N& n, LroKind kind, Granularity g) const {
        return n.variant ? *n.variant : best_practice_variant(kind, g);
    }

    std::string apply(const ScanNode& n, State& s) {
        if (n.relation == "*") {
            s.db = &db_;
        } else {
            s.rel = db_.get(n.relation);
        }
        return "";
    }

    std::string apply(const FilterNode& n, State& s) {
        const auto& r = s.relation();
        const auto c = r.require_column(column_in(r, n.column));
        std::vector<bool> mask;
        for (const auto& row : r.rows()) mask.push_back(keep(row[c], n.op, n.literal));
        s.rel = filter_by_mask(r, mask);
        return "";
    }

    std::string apply(const LroSelectNode& n, State& s) {
        const auto v = resolve(n, LroKind::Select, n.g);
        const Requirement l(n.requirement);
        if (n.g == Granularity::Table) {
            if (!s.db) fail(ErrorKind::Usage, "table-wise select needs a database scan");
            const auto kept = lro_select(ctx_, *s.db, l, v);
            std::vector<Row> rows;
            for (const auto& r : kept.relations()) rows.push_back({r.name()});
            s.rel = Relation("tables", {"table"}, std::move(rows));
            s.db = nullptr;
        } else {
            s.rel = lro_select(ctx_, s.relation(), n.g, l, v);
        }
        return v.to_string();
    }

    std::string apply(const LroMatchJoinNode& n, State& s) {
        const auto v = resolve(n, LroKind::Match, n.g);
        const Requirement l(n.requirement);
        const auto& left = s.relation();
        const auto& right = db_.get(n.other);
        if (n.g == Granularity::Cell) {
            const MatchKeys keys{column_in(left, n.left_key), column_in(right, n.right_key)};
            const auto m = lro_match(ctx_, left, right, n.g, l, v, keys);
            s.rel = materialize_join(left, right, keys, m);
        } else if (n.g == Granularity::Row) {
            const auto m = lro_match(ctx_, left, right, n.g, l, v);
            auto columns = left.columns();
            const auto extra = right_columns(left, right);
            columns.insert(columns.end(), extra.begin(), extra.end());
            std::vector<Row> rows;
            for (const auto& [i, j] : m.pairs) {
                Row row = left.rows()[i];
                row.insert(row.end(), right.rows()[j].begin(), right.rows()[j].end());
                rows.push_back(std::move(row));
            }
            s.rel = Relation(left.name() + "_" + right.name(), std::move(columns), std::move(rows));
        } else {
            const auto m = lro_match(ctx_, left, right, n.g, l, v);
            std::vector<Row> rows;
            for (const auto& [i, j] : m.pairs) rows.push_back({left.columns()[i], right.columns()[j]});
            s.rel = Relation("column_matches", {"left_column", "right_column"}, std::move(rows));
        }
        return v.to_string();
    }

    std::string apply(const LroImputeNode& n, State& s) {
        const auto v = resolve(n, LroKind::Impute, n.g);
        s.rel = lro_impute(ctx_, s.relation(), n.g, Requirement(n.requirement), v, ImputeSpec{n.new_column, n.rows});
        return v.to_string();
    }

    std::string apply(const LroClusterNode& n, State& s) {
        const auto v = resolve(n, LroKind::Cluster, n.g);
        const Requirement l(n.requirement);
        if (n.g == Granularity::Table) {
            if (!s.db) fail(ErrorKind::Usage, "table-wise cluster needs a database scan");
            const auto c = lro_cluster(ctx_, *s.db, l, v);
            std::vector<std::string> names;
            for (const auto& r : s.db->relations()) names.push_back(r.name());
            s.rel = cluster_relation("table", names, c);
            s.db = nullptr;
        } else if (n.g == Granularity::Column) {
            const auto& r = s.relation();
            s.rel = cluster_relation("column", r.columns(), lro_cluster(ctx_, r, n.g, l, v));
        } else {
            const auto& r = s.relation();
            if (r.column_index(detail::kClusterColumn)) fail(ErrorKind::Domain, "column 'cluster' already exists");
            const auto labels = lro_cluster(ctx_, r, n.g, l, v).labels();
            s.rel = append_column(r, detail::kClusterColumn, std::vector<Cell>(labels.begin(), labels.end()));
        }
        return v.to_string();
    }

    std::string apply(const LroOrderNode& n, State& s) {
        const auto v = resolve(n, LroKind::Order, Granularity::Row);
        s.rel = lro_order(ctx_, s.relation(), Requirement(n.requirement), v);
        return v.to_string();
    }

    std::string apply(const OrderByNode& n, State& s) {
        const auto& r = s.relation();
        const auto c = r.require_column(column_in(r, n.column));
        std::vector<std::size_t> perm(r.row_count());
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::stable_sort(perm.begin(), perm.end(), [&](auto a, auto b) {
            const int cmp = compare_cells(r.at(a, c), r.at(b, c));
            return n.descending ? cmp > 0 : cmp < 0;
        });
        s.rel = apply_permutation(r, perm);
        return "";
    }

    std::string apply(const GroupByNode& n, State& s) {
        const auto& r = s.relation();
        std::vector<std::string> keys;
        for (const auto& k : n.keys) keys.push_back(column_in(r, k));
        auto columns = keys;
        if (n.with_count) columns.push_back(detail::kCountColumn);
        std::vector<Row> rows;
        for (auto& g : group_rows(r, keys)) {
            Row row = g.key;
            if (n.with_count) row.push_back(std::to_string(g.rows.row_count()));
            rows.push_back(std::move(row));
        }
        s.rel = Relation(r.name(), std::move(columns), std::move(rows));
        return "";
    }

    std::string apply(const ProjectNode& n, State& s) {
        const auto& r = s.relation();
        std::vector<std::string> cols;
        for (const auto& c : n.columns) cols.push_back(column_in(r, c));
        s.rel = project(r, cols);
        return "";
    }

    std::string apply(const LimitNode& n, State& s) {
        s.rel = take(s.relation(), n.n);
        return "";
    }

    const Database& db_;
    Engine& engine_;
    OperatorContext ctx_;
};

}  // namespace

ExecResult execute(const Plan& plan, const Database& db, Engine& engine) {
    validate_plan(plan, db);
    auto& gw = engine.gateway;
    std::optional<QueryScope> scope;
    if (!gw.deadline()) scope.emplace(gw);

    const std::size_t start = gw.ledger_size();
    Executor exec(db, engine);
    ExecResult out;
    State state;
    for (std::size_t k = 0; k < plan.nodes.size(); ++k) {
        const auto& node = plan.nodes[k];
        NodeTrace t;
        t.node = node_label(node);
        t.rows_in = state.size();
        const std::size_t before = gw.ledger_size();
        const std::size_t events_before = exec.events().size();
        try {
            t.variant = exec.run(node, state);
        } catch (const Error& e) {
            std::string where = "node " + std::to_string(k) + " " + t.node;
            if (k < plan.positions.size()) where += " at " + plan.positions[k].to_string();
            fail(e.kind(), where + ": " + e.what());
        }
        t.rows_out = state.size();
        const auto delta = gw.ledger().slice(before);
        t.calls = delta.calls();
        t.input_tokens = delta.input_tokens();
        t.output_tokens = delta.output_tokens();
        for (std::size_t i = events_before; i < exec.events().size(); ++i) {
            out.warnings.push_back(t.node + ": " + exec.events()[i]);
        }
        out.trace.push_back(std::move(t));
    }
    if (state.rel) {
        out.result = std::move(*state.rel);
    } else {
        std::vector<Row> rows;
        for (const auto& r : db.relations()) rows.push_back({r.name()});
        out.result = Relation("tables", {"table"}, std::move(rows));
    }
    out.ledger = gw.ledger().slice(start);
    return out;
}

std::string trace_to_json(const ExecResult& result) {
    nlohmann::ordered_json j;
    j["calls"] = result.ledger.calls();
    j["input_tokens"] = result.ledger.input_tokens();
    j["output_tokens"] = result.ledger.output_tokens();
    auto& nodes = j["nodes"] = nlohmann::ordered_json::array();
    for (const auto& t : result.trace) {
        nlohmann::ordered_json n;
        n["node"] = t.node;
        if (!t.variant.empty()) n["variant"] = t.variant;
        n["rows_in"] = t.rows_in;
        n["rows_out"] = t.rows_out;
        n["calls"] = t.calls;
        n["input_tokens"] = t.input_tokens;
        n["output_tokens"] = t.output_tokens;
        nodes.push_back(std::move(n));
    }
    j["warnings"] = result.warnings;
    return j.dump(2) + "\n";
}

}  // namespace lro
