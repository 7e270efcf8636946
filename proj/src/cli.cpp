#include "lro/cli.hpp"

#include "lro/bench.hpp"
#include "lro/config.hpp"
#include "lro/operators.hpp"
#include "lro/plan.hpp"
#include "lro/relation.hpp"
#include "lro/scale_lab.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace lro {

int exit_code_for(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Usage: return kExitUsage;
        case ErrorKind::Backend:
        case ErrorKind::Timeout: return kExitBackend;
        default: return kExitDomain;
    }
}

namespace {

struct CommonFlags {
    std::string config;
    std::string mock;
    std::string model;
    std::size_t parallelism = 0;
    double timeout_seconds = 0;
    std::string templates;
    bool cot = false;
    bool examples = false;
    bool no_degrade = false;
};

void add_common(CLI::App& cmd, CommonFlags& f) {
    cmd.add_option("--mock", f.mock, "Mock script (JSON); replaces the configured backend");
    cmd.add_option("--model", f.model, "Model name");
    cmd.add_option("--parallelism", f.parallelism, "Requests in flight");
    cmd.add_option("--timeout", f.timeout_seconds, "Per-query timeout in seconds");
    cmd.add_option("--templates", f.templates, "Prompt template directory");
    cmd.add_flag("--cot", f.cot, "Chain-of-thought prompting");
    cmd.add_flag("--examples", f.examples, "Include data examples in prompts");
    cmd.add_flag("--no-degrade", f.no_degrade, "Fail instead of splitting an oversized ALL prompt");
}

/// Flags override the file, which overrides built-in defaults.
AppConfig resolve_config(const CommonFlags& f) {
    AppConfig cfg = f.config.empty() ? AppConfig{} : load_config(f.config);
    if (!f.mock.empty()) {
        cfg.backend.kind = "mock";
        cfg.backend.mock_script = f.mock;
    }
    if (!f.model.empty()) cfg.backend.config.model = f.model;
    if (f.parallelism) cfg.backend.config.parallelism = f.parallelism;
    if (f.timeout_seconds > 0) {
        cfg.backend.config.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(f.timeout_seconds * 1000.0));
    }
    if (!f.templates.empty()) cfg.templates_dir = f.templates;
    if (f.cot) cfg.prompt.cot = true;
    if (f.examples) cfg.prompt.examples = true;
    if (f.no_degrade) cfg.allow_degrade = false;
    cfg.validate();
    return cfg;
}

std::string money(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "$%.6f", v);
    return buf;
}

std::string ledger_summary(const UsageLedger& ledger, const PriceTable& prices) {
    std::string out = "calls: " + std::to_string(ledger.calls()) + "  input_tokens: " +
                      std::to_string(ledger.input_tokens()) + "  output_tokens: " +
                      std::to_string(ledger.output_tokens()) + "  cost: ";
    std::set<std::string> unpriced;
    UsageLedger priced;
    for (const auto& r : ledger.records()) {
        if (prices.count(r.model)) {
            priced.append(r);
        } else {
            unpriced.insert(r.model);
        }
    }
    out += money(cost(priced, prices).total);
    if (!unpriced.empty()) {
        out += " (unpriced:";
        for (const auto& m : unpriced) out += " " + m;
        out += ")";
    }
    return out + "\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
    out << text;
    if (!out) fail(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

void emit_relation(const Relation& r, const std::string& out_path, const std::string& format, std::ostream& out) {
    std::string fmt = format;
    if (fmt.empty() && !out_path.empty()) {
        const auto f = format_from_extension(out_path);
        fmt = f == DataFormat::Json ? "json" : "csv";
    }
    if (fmt.empty()) fmt = "csv";
    if (fmt != "csv" && fmt != "json") fail(ErrorKind::Usage, "--format must be csv or json");
    std::string text;
    if (fmt == "json") {
        text = to_json_text(r);
    } else {
        std::ostringstream s;
        write_csv(s, r);
        text = s.str();
    }
    if (out_path.empty()) {
        out << text;
    } else {
        write_text(out_path, text);
    }
}

void print_warnings(const std::vector<std::string>& warnings, std::ostream& err) {
    for (const auto& w : warnings) err << "warning: " << w << "\n";
}

// ---------------------------------------------------------------------------
// op

struct OpFlags {
    std::string op;
    std::string granularity;
    std::string variant;
    std::vector<std::string> inputs;
    std::string db;
    std::string requirement;
    std::vector<std::string> keys;
    std::string new_column;
    std::size_t rows = 0;
    std::string out;
    std::string format;
    std::string trace;
};

int run_op(const CommonFlags& common, const OpFlags& f, std::ostream& out, std::ostream& err) {
    const auto kind = parse_lro_kind(f.op);
    if (!kind) fail(ErrorKind::Usage, "unknown operator '" + f.op + "'");
    const auto g = parse_granularity(f.granularity);
    if (!g) fail(ErrorKind::Usage, "unknown granularity '" + f.granularity + "'");
    std::optional<Variant> v;
    if (!f.variant.empty()) {
        v = parse_variant(f.variant);
        if (!v) fail(ErrorKind::Usage, "unknown variant '" + f.variant + "'");
        require_supported(*kind, *g, *v);
    } else if (!is_supported(*kind, *g)) {
        fail(ErrorKind::Usage, std::string(to_string(*g)) + "-wise " + to_string(*kind) + " is not defined");
    }
    if (f.requirement.empty()) fail(ErrorKind::Usage, "--requirement is required");
    const AppConfig cfg = resolve_config(common);

    Database db;
    if (!f.db.empty()) db = load_database(f.db);
    std::vector<std::string> names;
    for (const auto& path : f.inputs) {
        auto r = load_relation(path);
        names.push_back(r.name());
        db.add(std::move(r));
    }

    Plan plan;
    if (*g == Granularity::Table) {
        if (db.size() == 0) fail(ErrorKind::Usage, "table granularity needs --db or --input");
        plan.nodes.push_back(ScanNode{"*"});
    } else {
        if (names.empty()) fail(ErrorKind::Usage, "--input is required");
        plan.nodes.push_back(ScanNode{names.front()});
    }
    switch (*kind) {
        case LroKind::Select: plan.nodes.push_back(LroSelectNode{*g, f.requirement, v}); break;
        case LroKind::Cluster: plan.nodes.push_back(LroClusterNode{*g, f.requirement, v}); break;
        case LroKind::Order: plan.nodes.push_back(LroOrderNode{f.requirement, v}); break;
        case LroKind::Impute:
            if (*g == Granularity::Column && f.new_column.empty()) fail(ErrorKind::Usage, "--new-column is required");
            if (*g == Granularity::Row && f.rows == 0) fail(ErrorKind::Usage, "--rows must be positive");
            plan.nodes.push_back(LroImputeNode{*g, f.new_column, f.rows, f.requirement, v});
            break;
        case LroKind::Match: {
            if (names.size() != 2) fail(ErrorKind::Usage, "match needs exactly two --input relations");
            LroMatchJoinNode n{names[1], *g, "", "", f.requirement, v};
            if (*g == Granularity::Cell) {
                if (f.keys.size() != 2) fail(ErrorKind::Usage, "cell-wise match needs --keys LEFT,RIGHT");
                n.left_key = f.keys[0];
                n.right_key = f.keys[1];
            }
            plan.nodes.push_back(n);
            break;
        }
    }

    Gateway gw(cfg.backend.config, make_backend(cfg.backend));
    const auto templates = load_templates(cfg);
    Engine engine(gw, templates, cfg.prompt);
    engine.allow_degrade = cfg.allow_degrade;
    const auto res = execute(plan, db, engine);
    print_warnings(res.warnings, err);
    emit_relation(res.result, f.out, f.format, out);
    if (!f.trace.empty()) write_text(f.trace, trace_to_json(res));
    err << ledger_summary(res.ledger, cfg.prices);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// plan

struct PlanFlags {
    std::string plan_file;
    std::string query;
    std::string db;
    std::string out;
    std::string format;
    std::string trace;
};

int run_plan(const CommonFlags& common, const PlanFlags& f, std::ostream& out, std::ostream& err) {
    if (f.plan_file.empty() == f.query.empty()) fail(ErrorKind::Usage, "give exactly one of --plan or --query");
    std::string text = f.query;
    if (!f.plan_file.empty()) {
        std::ifstream in(f.plan_file, std::ios::binary);
        if (!in) fail(ErrorKind::Io, "cannot open plan '" + f.plan_file + "'");
        std::stringstream buf;
        buf << in.rdbuf();
        text = buf.str();
    }
    const Plan plan = parse_plan(text);
    const AppConfig cfg = resolve_config(common);
    const Database db = f.db.empty() ? Database{} : load_database(f.db);
    Gateway gw(cfg.backend.config, make_backend(cfg.backend));
    const auto templates = load_templates(cfg);
    Engine engine(gw, templates, cfg.prompt);
    engine.allow_degrade = cfg.allow_degrade;
    const auto res = execute(plan, db, engine);
    print_warnings(res.warnings, err);
    emit_relation(res.result, f.out, f.format, out);
    if (!f.trace.empty()) write_text(f.trace, trace_to_json(res));
    err << ledger_summary(res.ledger, cfg.prices);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchFlags {
    std::string suite;
    std::string db;
    std::string out;
    std::string judge_mock;
    std::string judge_model = "judge";
    int easy_max = 0;
    int medium_max = 0;
    bool concurrent = false;
    bool timing = false;
};

int run_bench(const CommonFlags& common, const BenchFlags& f, std::ostream& out, std::ostream& err) {
    AppConfig cfg = resolve_config(common);
    if (f.easy_max) cfg.thresholds.easy_max = f.easy_max;
    if (f.medium_max) cfg.thresholds.medium_max = f.medium_max;
    if (!f.judge_mock.empty()) {
        BackendSection j;
        j.kind = "mock";
        j.mock_script = f.judge_mock;
        j.config = cfg.backend.config;
        j.config.model = f.judge_model;
        cfg.judge = j;
    }
    cfg.validate();
    const auto specs = load_suite(f.suite);
    const Database db = f.db.empty() ? Database{} : load_database(f.db);
    Gateway gw(cfg.backend.config, make_backend(cfg.backend));
    std::optional<Gateway> judge;
    if (cfg.judge) judge.emplace(cfg.judge->config, make_backend(*cfg.judge));
    const auto templates = load_templates(cfg);

    SuiteOptions opts;
    opts.prompt = cfg.prompt;
    opts.thresholds = cfg.thresholds;
    opts.prices = cfg.prices;
    opts.judge = judge ? &*judge : nullptr;
    opts.timing = f.timing;
    opts.concurrent = f.concurrent || cfg.bench_concurrent;
    const auto report = run_suite(specs, db, gw, templates, opts);
    emit_report(report, f.out);
    for (const auto& q : report.queries) {
        if (!q.error.empty()) err << "query " << q.id << ": " << q.error << "\n";
    }
    out << report_summary(report);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepFlags {
    std::string task;
    std::vector<std::size_t> scales;
    std::vector<std::string> batches;
    std::size_t repeats = 0;
    std::string input;
    std::size_t synthetic = 0;
    std::uint64_t seed = 7;
    bool oracle = false;
    std::int64_t fault_threshold = 0;
    std::string date_column;
    std::string out;
    bool timing = false;
};

std::size_t parse_batch(const std::string& s) {
    if (s == "ALL" || s == "all") return 0;
    if (s == "ONE" || s == "one") return 1;
    try {
        std::size_t pos = 0;
        const auto v = std::stoull(s, &pos);
        if (pos == s.size()) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    fail(ErrorKind::Usage, "bad batch size '" + s + "' (use ALL, ONE or a number)");
}

int run_sweep(const CommonFlags& common, const SweepFlags& f, std::ostream& out, std::ostream& err) {
    AppConfig cfg = resolve_config(common);
    SweepConfig sc = cfg.sweep;
    if (!f.task.empty()) {
        const auto t = parse_sweep_task(f.task);
        if (!t) fail(ErrorKind::Usage, "--task must be select_row or impute_column");
        sc.task = *t;
    }
    if (!f.scales.empty()) sc.scales = f.scales;
    if (!f.batches.empty()) {
        sc.batches.clear();
        for (const auto& b : f.batches) sc.batches.push_back(parse_batch(b));
    }
    if (f.repeats) sc.repeats = f.repeats;
    if (!f.date_column.empty()) sc.date_column = f.date_column;
    if (common.timeout_seconds > 0) sc.timeout = cfg.backend.config.timeout;
    sc.validate();

    Relation r;
    if (!f.input.empty()) {
        r = load_relation(f.input);
    } else {
        r = synthetic_players(f.synthetic ? f.synthetic : sc.scales.back(), f.seed);
    }

    std::shared_ptr<ChatBackend> backend;
    if (f.oracle || f.fault_threshold > 0) {
        backend = make_rule_backend(sc.task, sc.date_column,
                                    f.fault_threshold > 0 ? std::optional<std::int64_t>(f.fault_threshold) : std::nullopt);
    } else {
        backend = make_backend(cfg.backend);
    }
    Gateway gw(cfg.backend.config, backend);
    const auto templates = load_templates(cfg);
    SweepOptions opts;
    opts.prompt = cfg.prompt;
    opts.prices = cfg.prices;
    opts.timing = f.timing;
    const auto records = sweep(sc, r, gw, templates, opts);
    const auto curve = quality_cost_curve(records);

    std::error_code ec;
    std::filesystem::create_directories(f.out, ec);
    if (ec) fail(ErrorKind::Io, "cannot create '" + f.out + "': " + ec.message());
    write_text(std::filesystem::path(f.out) / "sweep.csv", sweep_csv(records));
    write_text(std::filesystem::path(f.out) / "curve.csv", curve_csv(curve));
    std::size_t failed = 0;
    for (const auto& rec : records) failed += rec.outcome != RunOutcome::Ok;
    err << "records: " << records.size() << "  failed runs: " << failed << "\n";
    out << curve_csv(curve);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// report

Report report_from_json(const std::string& text) {
    using json = nlohmann::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Parse, std::string("malformed report: ") + e.what());
    }
    Report r;
    try {
        r.model = j.value("model", "");
        r.judge_model = j.value("judge_model", "");
        if (j.contains("thresholds")) {
            r.thresholds.easy_max = j["thresholds"].value("easy_max", 5);
            r.thresholds.medium_max = j["thresholds"].value("medium_max", 8);
        }
        for (const auto& [m, c] : j.at("cost").at("per_model").items()) r.cost_per_model[m] = c.get<double>();
        if (j["cost"].contains("unpriced_models")) {
            r.unpriced_models = j["cost"]["unpriced_models"].get<std::vector<std::string>>();
        }
        for (const auto& q : j.at("queries")) {
            QueryResult qr;
            qr.id = q.at("id").get<std::string>();
            qr.score.bucket = q.at("bucket").get<std::string>();
            const auto outcome = q.at("outcome").get<std::string>();
            qr.outcome = outcome == "pass"      ? Outcome::Pass
                         : outcome == "fail"    ? Outcome::Fail
                         : outcome == "timeout" ? Outcome::Timeout
                                                : Outcome::Error;
            qr.cost = q.value("cost", 0.0);
            r.queries.push_back(std::move(qr));
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Parse, std::string("malformed report: ") + e.what());
    }
    return r;
}

int run_report(const std::string& in_path, std::ostream& out) {
    std::filesystem::path p(in_path);
    if (std::filesystem::is_directory(p)) p /= "report.json";
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open report '" + p.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    out << report_summary(report_from_json(buf.str()));
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Relational operators backed by language models", "lro"};
    app.require_subcommand(1);
    CommonFlags common;
    app.add_option("--config", common.config, "TOML configuration file");

    auto* op = app.add_subcommand("op", "Run a single operator");
    OpFlags opf;
    op->add_option("--op", opf.op, "select, match, impute, cluster or order")->required();
    op->add_option("--granularity,-g", opf.granularity, "cell, row, column or table")->required();
    op->add_option("--variant", opf.variant, "ALL, ONE, SEMI, PAIR, SORT, SCORE or BATCH(b); default: best practice");
    op->add_option("--input,-i", opf.inputs, "Input relation (CSV or JSON); repeat for match");
    op->add_option("--db", opf.db, "Database directory");
    op->add_option("--requirement,-l", opf.requirement, "Natural-language requirement");
    op->add_option("--keys", opf.keys, "Join keys for cell-wise match: LEFT,RIGHT")->delimiter(',');
    op->add_option("--new-column", opf.new_column, "Column to create (column impute)");
    op->add_option("--rows", opf.rows, "Rows to generate (row impute)");
    op->add_option("--out,-o", opf.out, "Output file");
    op->add_option("--format", opf.format, "csv or json");
    op->add_option("--trace", opf.trace, "Write the execution trace as JSON");
    add_common(*op, common);

    auto* plan = app.add_subcommand("plan", "Execute a query plan");
    PlanFlags pf;
    plan->add_option("--plan,-p", pf.plan_file, "Plan file");
    plan->add_option("--query,-q", pf.query, "Plan text");
    plan->add_option("--db", pf.db, "Database directory");
    plan->add_option("--out,-o", pf.out, "Output file");
    plan->add_option("--format", pf.format, "csv or json");
    plan->add_option("--trace", pf.trace, "Write the execution trace as JSON");
    add_common(*plan, common);

    auto* bench = app.add_subcommand("bench", "Run a benchmark suite");
    BenchFlags bf;
    bench->add_option("--suite,-s", bf.suite, "Suite file or directory")->required();
    bench->add_option("--db", bf.db, "Database directory");
    bench->add_option("--out,-o", bf.out, "Report directory")->required();
    bench->add_option("--judge-mock", bf.judge_mock, "Mock script for the judge model");
    bench->add_option("--judge-model", bf.judge_model, "Judge model name");
    bench->add_option("--easy-max", bf.easy_max, "Largest overall score bucketed as easy");
    bench->add_option("--medium-max", bf.medium_max, "Largest overall score bucketed as medium");
    bench->add_flag("--concurrent", bf.concurrent, "Run queries concurrently");
    bench->add_flag("--timing", bf.timing, "Record wall time per query");
    add_common(*bench, common);

    auto* sw = app.add_subcommand("sweep", "Run a scale sweep");
    SweepFlags sf;
    sw->add_option("--task", sf.task, "select_row or impute_column");
    sw->add_option("--scales", sf.scales, "Row counts, ascending")->delimiter(',');
    sw->add_option("--batches", sf.batches, "Batch sizes: ONE, ALL or numbers")->delimiter(',');
    sw->add_option("--repeats", sf.repeats, "Runs per cell");
    sw->add_option("--input,-i", sf.input, "Relation with a date column");
    sw->add_option("--synthetic", sf.synthetic, "Rows of generated player data when no input is given");
    sw->add_option("--seed", sf.seed, "Seed for generated data");
    sw->add_option("--date-column", sf.date_column, "Date column name");
    sw->add_flag("--oracle", sf.oracle, "Answer from the rule oracle instead of a model");
    sw->add_option("--fault-threshold", sf.fault_threshold,
                   "Oracle that replies unparseably above this many prompt tokens");
    sw->add_option("--out,-o", sf.out, "Output directory")->required();
    sw->add_flag("--timing", sf.timing, "Record wall time per run");
    add_common(*sw, common);

    auto* rep = app.add_subcommand("report", "Print the summary of a bench report");
    std::string report_in;
    rep->add_option("--in", report_in, "Report directory or report.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*op) return run_op(common, opf, out, err);
        if (*plan) return run_plan(common, pf, out, err);
        if (*bench) return run_bench(common, bf, out, err);
        if (*sw) return run_sweep(common, sf, out, err);
        if (*rep) return run_report(report_in, out);
    } catch (const Error& e) {
        err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitDomain;
    }
    return kExitUsage;
}

}  // namespace lro
