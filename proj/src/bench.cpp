#include "lro/bench.hpp"

#include "lro/error.hpp"
#include "lro/metrics.hpp"
#include "json.hpp"
#include "plan_detail.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <set>
#include <sstream>

namespace lro {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Loading

namespace {

Cell json_cell(const json& v) {
    if (v.is_null()) return std::nullopt;
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

Relation truth_from_json(const json& v, const std::filesystem::path& base, const std::string& id) {
    if (v.is_string()) return load_relation(base / v.get<std::string>());
    if (v.is_object() && v.contains("file")) return load_relation(base / v.at("file").get<std::string>());
    if (v.is_object() && v.contains("columns")) {
        std::vector<std::string> columns = v.at("columns").get<std::vector<std::string>>();
        std::vector<Row> rows;
        for (const auto& r : v.value("rows", json::array())) {
            if (!r.is_array()) fail(ErrorKind::Parse, "query '" + id + "': ground-truth rows must be arrays");
            Row row;
            for (const auto& c : r) row.push_back(json_cell(c));
            rows.push_back(std::move(row));
        }
        return Relation("ground_truth", std::move(columns), std::move(rows));
    }
    if (v.is_array()) return read_json(v.dump(), "ground_truth");
    fail(ErrorKind::Parse, "query '" + id + "': unsupported ground_truth form");
}

int dimension(const json& ann, const char* key, int fallback) {
    if (!ann.contains(key)) return fallback;
    const auto& v = ann.at(key);
    if (!v.is_number_integer()) fail(ErrorKind::Parse, std::string("annotation '") + key + "' must be an integer");
    return v.get<int>();
}

QuerySpec spec_from_json(const json& doc, const std::filesystem::path& base) {
    if (!doc.is_object()) fail(ErrorKind::Parse, "query spec must be a JSON object");
    QuerySpec s;
    try {
        s.id = doc.at("id").is_string() ? doc.at("id").get<std::string>() : doc.at("id").dump();
        s.question = doc.value("question", "");
        s.plan = doc.at("plan").get<std::string>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Parse, std::string("query spec: ") + e.what());
    }
    if (!doc.contains("ground_truth")) fail(ErrorKind::Parse, "query '" + s.id + "' has no ground_truth");
    s.ground_truth = truth_from_json(doc.at("ground_truth"), base, s.id);
    const auto ann = doc.value("annotations", json::object());
    const auto plan = parse_plan(s.plan);
    s.annotations.lro_count = dimension(ann, "lro_count", static_cast<int>(plan_lro_count(plan)));
    s.annotations.table_count = dimension(ann, "table_count", 1);
    s.annotations.hop_count = dimension(ann, "hop_count", 1);
    s.annotations.knowledge_level = dimension(ann, "knowledge_level", 1);
    if (doc.contains("order_sensitive")) s.order_sensitive = doc.at("order_sensitive").get<bool>();
    if (doc.contains("mock")) {
        const auto& m = doc.at("mock");
        if (m.is_string()) {
            std::ifstream in(base / m.get<std::string>(), std::ios::binary);
            if (!in) fail(ErrorKind::Io, "query '" + s.id + "': cannot open mock script '" + m.get<std::string>() + "'");
            std::stringstream buf;
            buf << in.rdbuf();
            s.mock = buf.str();
        } else {
            s.mock = m.dump();
        }
    }
    if (doc.contains("k")) s.k = doc.at("k").get<std::size_t>();
    return s;
}

json parse_json(std::string_view text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Parse, "malformed " + what + ": " + e.what());
    }
}

void load_file(const std::filesystem::path& file, std::vector<QuerySpec>& out) {
    std::ifstream in(file, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open suite '" + file.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    const auto doc = parse_json(buf.str(), "suite '" + file.string() + "'");
    const auto base = file.parent_path();
    const json* list = &doc;
    if (doc.is_object() && doc.contains("queries")) list = &doc.at("queries");
    if (list->is_array()) {
        for (const auto& q : *list) out.push_back(spec_from_json(q, base));
    } else {
        out.push_back(spec_from_json(doc, base));
    }
}

}  // namespace

QuerySpec parse_query_spec(std::string_view json_text, const std::filesystem::path& base_dir) {
    return spec_from_json(parse_json(json_text, "query spec"), base_dir);
}

std::vector<QuerySpec> load_suite(const std::filesystem::path& path) {
    std::vector<QuerySpec> out;
    std::error_code ec;
    if (std::filesystem::is_directory(path, ec)) {
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(path)) {
            if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) load_file(f, out);
    } else {
        load_file(path, out);
    }
    std::set<std::string> ids;
    for (const auto& s : out) {
        if (!ids.insert(s.id).second) fail(ErrorKind::Parse, "duplicate query id '" + s.id + "'");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stratification

StratifiedScore stratify(const Annotations& a, const BucketThresholds& t) {
    if (a.lro_count < 1 || a.lro_count > 3) {
        fail(ErrorKind::Domain, "lro_count " + std::to_string(a.lro_count) + " outside {1, 2, 3}");
    }
    StratifiedScore s;
    if (a.lro_count == 1) {
        s.bucket = "single";
        return s;
    }
    auto dim = [](int v, const char* name) {
        if (v < 1 || v > 3) fail(ErrorKind::Domain, std::string(name) + " " + std::to_string(v) + " outside [1, 3]");
        return v;
    };
    s.lro = a.lro_count == 2 ? 1 : 3;
    s.tables = dim(a.table_count, "table_count");
    s.hops = dim(a.hop_count, "hop_count");
    s.knowledge = dim(a.knowledge_level, "knowledge_level");
    s.overall = s.lro + s.tables + s.hops + s.knowledge;
    s.bucket = s.overall <= t.easy_max ? "easy" : s.overall <= t.medium_max ? "medium" : "hard";
    return s;
}

const char* to_string(Outcome o) noexcept {
    switch (o) {
        case Outcome::Pass: return "pass";
        case Outcome::Fail: return "fail";
        case Outcome::Error: return "error";
        case Outcome::Timeout: return "timeout";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Report aggregates

std::size_t Report::passes() const {
    return static_cast<std::size_t>(
        std::count_if(queries.begin(), queries.end(), [](const QueryResult& q) { return q.outcome == Outcome::Pass; }));
}

double Report::accuracy() const { return queries.empty() ? 0.0 : double(passes()) / double(queries.size()); }

std::vector<BucketSummary> Report::buckets() const {
    std::vector<BucketSummary> out;
    for (const char* b : {"easy", "medium", "hard", "single"}) {
        BucketSummary s{b, 0, 0};
        for (const auto& q : queries) {
            if (q.score.bucket != b) continue;
            ++s.total;
            s.passes += q.outcome == Outcome::Pass;
        }
        if (s.total) out.push_back(s);
    }
    return out;
}

double Report::total_cost() const {
    double t = 0;
    for (const auto& [m, c] : cost_per_model) t += c;
    return t;
}

std::string format_percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", fraction * 100.0);
    return buf;
}

// ---------------------------------------------------------------------------
// Running

namespace {

const PlanNode* single_lro(const Plan& plan) {
    const PlanNode* found = nullptr;
    for (const auto& n : plan.nodes) {
        if (!is_lro_node(n)) continue;
        if (found) return nullptr;
        found = &n;
    }
    return found;
}

std::vector<std::string> column_values(const Relation& r, std::size_t c) {
    std::vector<std::string> out;
    for (const auto& row : r.rows()) out.push_back(row[c] ? *row[c] : std::string());
    return out;
}

std::vector<Cell> flatten(const Relation& r) {
    std::vector<Cell> out;
    for (const auto& row : r.rows()) out.insert(out.end(), row.begin(), row.end());
    return out;
}

void single_metrics(const PlanNode& node, const Relation& pred, const Relation& truth, const QuerySpec& spec,
                    Gateway* judge, const std::string& task_model, const PromptTemplates& templates,
                    std::vector<std::pair<std::string, double>>& out) {
    auto set_metrics = [&](const std::vector<std::string>& p, const std::vector<std::string>& t) {
        const auto m = prf(p, t);
        out.push_back({"precision", m.precision});
        out.push_back({"recall", m.recall});
        out.push_back({"f1", m.f1});
    };
    if (const auto* s = std::get_if<LroSelectNode>(&node)) {
        if (s->g == Granularity::Column) {
            set_metrics(pred.columns(), truth.columns());
        } else {
            set_metrics(row_keys(pred), row_keys(truth));
        }
    } else if (std::holds_alternative<LroMatchJoinNode>(node)) {
        set_metrics(row_keys(pred), row_keys(truth));
    } else if (std::holds_alternative<LroImputeNode>(node)) {
        const auto p = flatten(pred), t = flatten(truth);
        if (p.size() != t.size() || pred.columns() != truth.columns()) {
            out.push_back({"exact_match", 0.0});
            return;
        }
        out.push_back({"exact_match", exact_match_ratio(p, t)});
        if (judge) {
            out.push_back({"judge", llm_judge_score(p, t, *judge, task_model, templates).score});
        }
    } else if (std::holds_alternative<LroClusterNode>(node)) {
        const auto pc = pred.column_index(detail::kClusterColumn), tc = truth.column_index(detail::kClusterColumn);
        if (!pc || !tc || pred.row_count() != truth.row_count() || pred.row_count() == 0) return;
        const auto p = column_values(pred, *pc), t = column_values(truth, *tc);
        out.push_back({"ari", ari(p, t)});
        out.push_back({"nmi", nmi(p, t)});
    } else if (std::holds_alternative<LroOrderNode>(node)) {
        const auto p = row_keys(pred), t = row_keys(truth);
        if (t.empty() || std::multiset<std::string>(p.begin(), p.end()) != std::multiset<std::string>(t.begin(), t.end()) ||
            std::set<std::string>(t.begin(), t.end()).size() != t.size()) {
            return;
        }
        const std::size_t k = std::min(spec.k.value_or(std::min<std::size_t>(5, t.size())), t.size());
        out.push_back({"hr_at_k", hit_rate_at_k(p, t, k)});
        out.push_back({"kendall_tau", kendall_tau_on_hits(p, t, k)});
    }
}

QueryResult run_one(const QuerySpec& spec, const Database& db, Gateway& base, const PromptTemplates& templates,
                    const SuiteOptions& opts, UsageLedger& usage) {
    QueryResult r;
    r.id = spec.id;
    r.score = stratify(spec.annotations, opts.thresholds);
    std::optional<Gateway> gw;
    const auto start = Clock::now();
    try {
        if (spec.mock) {
            gw.emplace(base.fork(std::make_shared<MockBackend>(load_mock_script(*spec.mock))));
        } else {
            gw.emplace(base.fork());
        }
        const auto plan = parse_plan(spec.plan, db);
        Engine engine(*gw, templates, opts.prompt);
        ExecResult res;
        {
            QueryScope scope(*gw);
            res = execute(plan, db, engine);
        }
        r.warnings = res.warnings;
        const bool ordered = spec.order_sensitive.value_or(plan_is_order_sensitive(plan));
        r.outcome = table_exact_match(res.result, spec.ground_truth, ordered) ? Outcome::Pass : Outcome::Fail;
        if (spec.annotations.lro_count == 1) {
            if (const auto* node = single_lro(plan)) {
                single_metrics(*node, res.result, spec.ground_truth, spec, opts.judge, gw->config().model, templates,
                               r.metrics);
            }
        }
    } catch (const Error& e) {
        r.outcome = e.kind() == ErrorKind::Timeout ? Outcome::Timeout : Outcome::Error;
        r.error = std::string(to_string(e.kind())) + ": " + e.what();
    } catch (const std::exception& e) {
        r.outcome = Outcome::Error;
        r.error = e.what();
    }
    if (opts.timing) {
        r.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    }
    if (gw) {
        const auto ledger = gw->ledger();
        usage = ledger;
        r.calls = ledger.calls();
        r.input_tokens = ledger.input_tokens();
        r.output_tokens = ledger.output_tokens();
    }
    return r;
}

}  // namespace

Report run_suite(const std::vector<QuerySpec>& specs, const Database& db, Gateway& gateway,
                 const PromptTemplates& templates, const SuiteOptions& opts) {
    Report report;
    report.thresholds = opts.thresholds;
    report.model = gateway.config().model;
    if (opts.judge) report.judge_model = opts.judge->config().model;
    report.queries.resize(specs.size());

    std::vector<UsageLedger> usage(specs.size());
    auto one = [&](std::size_t i) { report.queries[i] = run_one(specs[i], db, gateway, templates, opts, usage[i]); };
    if (opts.concurrent && specs.size() > 1) {
        std::vector<std::future<void>> jobs;
        for (std::size_t i = 0; i < specs.size(); ++i) jobs.push_back(std::async(std::launch::async, one, i));
        for (auto& j : jobs) j.get();
    } else {
        for (std::size_t i = 0; i < specs.size(); ++i) one(i);
    }

    std::set<std::string> unpriced;
    auto priced = [&](const UsageLedger& ledger) {
        UsageLedger known;
        for (const auto& rec : ledger.records()) {
            if (opts.prices.count(rec.model)) {
                known.append(rec);
            } else {
                unpriced.insert(rec.model);
            }
        }
        return cost(known, opts.prices);
    };
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto c = priced(usage[i]);
        report.queries[i].cost = c.total;
        for (const auto& [m, d] : c.per_model) report.cost_per_model[m] += d;
    }
    if (opts.judge) {
        for (const auto& [m, d] : priced(opts.judge->ledger()).per_model) report.cost_per_model[m] += d;
    }
    report.unpriced_models.assign(unpriced.begin(), unpriced.end());
    return report;
}

// ---------------------------------------------------------------------------
// Emission

namespace {

std::string number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

/// Results grouped by bucket (easy, medium, hard, single, then anything
/// else), input order within a bucket.
std::vector<const QueryResult*> grouped(const Report& report) {
    std::vector<const QueryResult*> out;
    std::set<const QueryResult*> seen;
    for (const char* b : {"easy", "medium", "hard", "single"}) {
        for (const auto& q : report.queries) {
            if (q.score.bucket == b) {
                out.push_back(&q);
                seen.insert(&q);
            }
        }
    }
    for (const auto& q : report.queries) {
        if (!seen.count(&q)) out.push_back(&q);
    }
    return out;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string report_json(const Report& report) {
    json j;
    j["model"] = report.model;
    if (!report.judge_model.empty()) j["judge_model"] = report.judge_model;
    j["thresholds"] = {{"easy_max", report.thresholds.easy_max}, {"medium_max", report.thresholds.medium_max}};
    j["total"] = report.total();
    j["passes"] = report.passes();
    j["accuracy"] = report.accuracy();
    j["accuracy_percent"] = format_percent(report.accuracy());
    auto& buckets = j["buckets"] = json::array();
    for (const auto& b : report.buckets()) {
        buckets.push_back({{"bucket", b.bucket}, {"total", b.total}, {"passes", b.passes}, {"accuracy", b.accuracy()}});
    }
    j["cost"] = {{"total", report.total_cost()}, {"per_model", report.cost_per_model}};
    if (!report.unpriced_models.empty()) j["cost"]["unpriced_models"] = report.unpriced_models;
    auto& qs = j["queries"] = json::array();
    for (const auto* q : grouped(report)) {
        json e;
        e["id"] = q->id;
        e["bucket"] = q->score.bucket;
        e["stratification"] = {{"lro", q->score.lro},
                               {"tables", q->score.tables},
                               {"hops", q->score.hops},
                               {"knowledge", q->score.knowledge},
                               {"overall", q->score.overall}};
        e["outcome"] = to_string(q->outcome);
        if (!q->error.empty()) e["error"] = q->error;
        e["calls"] = q->calls;
        e["input_tokens"] = q->input_tokens;
        e["output_tokens"] = q->output_tokens;
        e["cost"] = q->cost;
        if (q->wall_ms) e["wall_ms"] = *q->wall_ms;
        if (!q->metrics.empty()) {
            json m = json::object();
            for (const auto& [k, v] : q->metrics) m[k] = v;
            e["metrics"] = m;
        }
        if (!q->warnings.empty()) e["warnings"] = q->warnings;
        qs.push_back(std::move(e));
    }
    return j.dump(2) + "\n";
}

std::string report_csv(const Report& report) {
    std::set<std::string> metric_names;
    for (const auto& q : report.queries) {
        for (const auto& [k, v] : q.metrics) metric_names.insert(k);
    }
    const bool timing = std::any_of(report.queries.begin(), report.queries.end(),
                                    [](const QueryResult& q) { return q.wall_ms.has_value(); });
    std::string out = "id,bucket,overall,outcome,calls,input_tokens,output_tokens,cost";
    if (timing) out += ",wall_ms";
    for (const auto& m : metric_names) out += "," + m;
    out += ",error\n";
    for (const auto* q : grouped(report)) {
        out += csv_field(q->id) + "," + q->score.bucket + "," + std::to_string(q->score.overall) + "," +
               to_string(q->outcome) + "," + std::to_string(q->calls) + "," + std::to_string(q->input_tokens) + "," +
               std::to_string(q->output_tokens) + "," + number(q->cost);
        if (timing) out += "," + (q->wall_ms ? number(*q->wall_ms) : std::string());
        for (const auto& m : metric_names) {
            auto it = std::find_if(q->metrics.begin(), q->metrics.end(), [&](const auto& p) { return p.first == m; });
            out += "," + (it == q->metrics.end() ? std::string() : number(it->second));
        }
        out += "," + csv_field(q->error) + "\n";
    }
    return out;
}

void emit_report(const Report& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create report directory '" + dir.string() + "': " + ec.message());
    auto write = [&](const char* name, const std::string& text) {
        std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::Io, "cannot write '" + (dir / name).string() + "'");
        out << text;
        if (!out) fail(ErrorKind::Io, "write failed for '" + (dir / name).string() + "'");
    };
    write("report.json", report_json(report));
    write("queries.csv", report_csv(report));
}

std::string report_summary(const Report& report) {
    std::ostringstream out;
    out << "queries: " << report.total() << "  passes: " << report.passes()
        << "  accuracy: " << format_percent(report.accuracy()) << "\n";
    for (const auto& b : report.buckets()) {
        out << "  " << b.bucket << ": " << b.passes << "/" << b.total << " (" << format_percent(b.accuracy()) << ")\n";
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", report.total_cost());
    out << "cost: $" << buf;
    if (!report.unpriced_models.empty()) {
        out << " (unpriced:";
        for (const auto& m : report.unpriced_models) out << " " << m;
        out << ")";
    }
    out << "\n";
    return out.str();
}

}  // namespace lro
