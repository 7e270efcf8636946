// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include "auto_mock.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

#include "lro/bench.hpp"
#include "lro/metrics.hpp"
#include "lro/operators.hpp"
#include "lro/plan.hpp"
#include "lro/scale_lab.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

using namespace lro;
using namespace lro::test;

namespace {

using Clock = std::chrono::steady_clock;

const std::filesystem::path kSource = LRO_SOURCE_DIR;
const std::filesystem::path kSamples = kSource / "samples";

// Collects the first few failures of a criterion.
struct Check {
    std::size_t cases = 0;
    std::vector<std::string> failures;

    void expect(bool ok, const std::string& what) {
        ++cases;
        if (!ok && failures.size() < 5) failures.push_back(what);
    }
    bool ok() const { return failures.empty(); }
};

int g_failed = 0;

void report(int id, const std::string& name, const Check& c, const std::string& detail) {
    std::cout << (c.ok() ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail << " (" << c.cases
              << " checks)";
    for (const auto& f : c.failures) std::cout << "\n       - " << f;
    std::cout << "\n";
    if (!c.ok()) ++g_failed;
}

template <class F>
void run(int id, const std::string& name, F&& body) {
    Check c;
    std::string detail;
    try {
        detail = body(c);
    } catch (const std::exception& e) {
        c.failures.push_back(std::string("exception: ") + e.what());
    }
    report(id, name, c, detail);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

double ms_since(Clock::time_point t) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t).count();
}

Relation numbered(std::size_t n, std::mt19937_64& rng) {
    std::vector<Row> rows;
    for (std::size_t i = 0; i < n; ++i) rows.push_back({"item" + std::to_string(i), std::to_string(rng() % 1000)});
    return Relation("t", {"id", "x"}, std::move(rows));
}

Relation ranked(const std::vector<long>& ranks) {
    std::vector<Row> rows;
    for (std::size_t i = 0; i < ranks.size(); ++i) rows.push_back({"r" + std::to_string(i), std::to_string(ranks[i])});
    return Relation("t", {"id", "rank"}, std::move(rows));
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

// ---------------------------------------------------------------------------

std::string metric_oracles(Check& c) {
    const auto start = Clock::now();
    std::mt19937_64 rng(2024);
    for (int i = 0; i < 2000; ++i) {
        const std::size_t n = 1 + rng() % 8;
        const auto p = random_partition(rng, n, 1 + rng() % 5);
        const auto t = random_partition(rng, n, 1 + rng() % 5);
        c.expect(std::abs(ari(p, t) - ari_oracle(p, t)) <= 1e-9, "ari mismatch at case " + std::to_string(i));
        c.expect(std::abs(nmi(p, t) - nmi_oracle(p, t)) <= 1e-9, "nmi mismatch at case " + std::to_string(i));
    }
    for (int i = 0; i < 2000; ++i) {
        const std::size_t n = 1 + rng() % 8;
        std::vector<std::string> truth, pred;
        for (std::size_t j = 0; j < n; ++j) truth.push_back("row" + std::to_string(j));
        pred = truth;
        std::shuffle(truth.begin(), truth.end(), rng);
        std::shuffle(pred.begin(), pred.end(), rng);
        const std::size_t k = 1 + rng() % n;
        c.expect(kendall_tau_on_hits(pred, truth, k) == tau_oracle(pred, truth, k),
                 "tau mismatch at case " + std::to_string(i));
    }
    const double ms = ms_since(start);
    c.expect(ms < 10000.0, "took " + fmt(ms) + " ms");
    return "2000 partition pairs + 2000 rankings in " + fmt(ms) + " ms";
}

std::string call_count_laws(Check& c) {
    std::mt19937_64 rng(8);
    const Requirement l("requirement");
    auto calls_of = [](const std::function<void(OperatorContext&)>& f) {
        MockGateway mg(auto_script());
        OperatorContext ctx(mg.gateway, templates());
        f(ctx);
        return std::make_pair(mg.gateway.ledger().calls(), mg.backend->total_sends());
    };
    auto expect_calls = [&](std::pair<std::size_t, std::size_t> got, std::size_t want, const std::string& what) {
        c.expect(got.first == want && got.second == want,
                 what + ": " + std::to_string(got.first) + " calls, expected " + std::to_string(want));
    };
    for (std::size_t n = 1; n <= 8; ++n) {
        const auto r = numbered(n, rng);
        const std::string sn = " n=" + std::to_string(n);
        expect_calls(calls_of([&](auto& ctx) { lro_select(ctx, r, Granularity::Row, l, Variant::one()); }), n,
                     "select ONE" + sn);
        expect_calls(calls_of([&](auto& ctx) { lro_select(ctx, r, Granularity::Row, l, Variant::all()); }), 1,
                     "select ALL" + sn);
        for (std::size_t b = 1; b <= 9; ++b) {
            expect_calls(calls_of([&](auto& ctx) { lro_select(ctx, r, Granularity::Row, l, Variant::batched(b)); }),
                         (n + b - 1) / b, "select BATCH(" + std::to_string(b) + ")" + sn);
        }
        for (std::size_t m = 1; m <= 8; ++m) {
            const auto right = numbered(m, rng);
            const std::string sm = sn + " m=" + std::to_string(m);
            expect_calls(calls_of([&](auto& ctx) { lro_match(ctx, r, right, Granularity::Row, l, Variant::one()); }),
                         n * m, "match ONE" + sm);
            expect_calls(calls_of([&](auto& ctx) { lro_match(ctx, r, right, Granularity::Row, l, Variant::semi()); }),
                         n, "match SEMI" + sm);
            expect_calls(calls_of([&](auto& ctx) { lro_match(ctx, r, right, Granularity::Row, l, Variant::all()); }),
                         1, "match ALL" + sm);
        }
        std::vector<long> ranks(n);
        std::iota(ranks.begin(), ranks.end(), 0L);
        std::shuffle(ranks.begin(), ranks.end(), rng);
        const auto rr = ranked(ranks);
        auto order_calls = [&](const Variant& v) {
            MockGateway mg(rank_oracle_script());
            OperatorContext ctx(mg.gateway, templates());
            order_permutation(ctx, rr, Requirement("Order by rank."), v);
            return std::make_pair(mg.gateway.ledger().calls(), mg.backend->total_sends());
        };
        expect_calls(order_calls(Variant::all()), 1, "order ALL" + sn);
        expect_calls(order_calls(Variant::pair()), n * (n - 1) / 2, "order PAIR" + sn);
        expect_calls(order_calls(Variant::score()), n, "order SCORE" + sn);
        const auto sort = order_calls(Variant::sort());
        c.expect(sort.first >= n - 1 && sort.first <= n * (n - 1) / 2 && sort.first == sort.second,
                 "order SORT" + sn + ": " + std::to_string(sort.first) + " calls");
    }
    return "select/match/order over n, m in 1..8";
}

std::string best_practice(Check& c) {
    using G = Granularity;
    const std::vector<std::tuple<LroKind, G, Variant>> table{
        {LroKind::Select, G::Row, Variant::one()},      {LroKind::Select, G::Column, Variant::all()},
        {LroKind::Select, G::Table, Variant::all()},    {LroKind::Match, G::Cell, Variant::all()},
        {LroKind::Match, G::Row, Variant::semi()},      {LroKind::Match, G::Column, Variant::all()},
        {LroKind::Impute, G::Cell, Variant::all()},     {LroKind::Impute, G::Row, Variant::one()},
        {LroKind::Impute, G::Column, Variant::one()},   {LroKind::Cluster, G::Row, Variant::all()},
        {LroKind::Cluster, G::Column, Variant::all()},  {LroKind::Cluster, G::Table, Variant::all()},
        {LroKind::Order, G::Row, Variant::all()},
    };
    std::size_t defined = 0;
    for (const auto& [k, g, v] : table) {
        const auto got = best_practice_variant(k, g);
        c.expect(got == v, std::string(to_string(k)) + "/" + to_string(g) + " -> " + got.to_string());
        ++defined;
    }
    // Undefined cells of the taxonomy must be rejected.
    for (auto k : {LroKind::Select, LroKind::Match, LroKind::Impute, LroKind::Cluster, LroKind::Order}) {
        for (auto g : {G::Cell, G::Row, G::Column, G::Table}) {
            if (is_supported(k, g)) continue;
            bool threw = false;
            try {
                best_practice_variant(k, g);
            } catch (const Error&) {
                threw = true;
            }
            c.expect(threw, std::string(to_string(k)) + "/" + to_string(g) + " should be undefined");
        }
    }
    // The best-practice table groups Cluster's three granularities in one entry: 11 entries, 13 cells.
    return std::to_string(defined) + " granularity cells (11 table entries) match";
}

std::string paper_examples(Check& c) {
    const auto db = load_database(kSamples / "db");
    double worst = 0;

    auto run_example = [&](const char* plan_file, const char* mock_file, const Relation& truth, bool ordered) {
        const auto start = Clock::now();
        MockGateway mg(load_mock_script_file((kSamples / mock_file).string()));
        Engine engine(mg.gateway, templates());
        const auto res = execute(parse_plan(slurp(kSamples / plan_file)), db, engine);
        const double ms = ms_since(start);
        worst = std::max(worst, ms);
        c.expect(table_exact_match(res.result, truth, ordered), std::string(plan_file) + ": result differs");
        c.expect(ms < 1000.0, std::string(plan_file) + ": took " + fmt(ms) + " ms");
    };

    const auto& restaurants = db.get("Restaurants");
    const auto col = *restaurants.column_index("Description");
    std::vector<Row> description;
    for (const auto& row : restaurants.rows()) description.push_back({row[col]});
    run_example("select_columns.plan", "select_columns.mock.json", Relation("truth", {"Description"}, description), true);
    run_example("bay_area.plan", "bay_area.mock.json", Relation("truth", {"Name"}, {{"Alley Wok"}}), true);
    return "Description column and one-cell \"Alley Wok\"; slowest " + fmt(worst) + " ms";
}

std::string ranking_fidelity(Check& c) {
    std::mt19937_64 rng(77);
    std::size_t runs = 0;
    for (std::size_t n = 1; n <= 8; ++n) {
        for (int trial = 0; trial < 5; ++trial) {
            std::vector<long> ranks(n);
            std::iota(ranks.begin(), ranks.end(), 0L);
            std::shuffle(ranks.begin(), ranks.end(), rng);
            const auto r = ranked(ranks);
            std::vector<std::string> truth(n);
            for (std::size_t i = 0; i < n; ++i) truth[static_cast<std::size_t>(ranks[i])] = "r" + std::to_string(i);
            for (const auto& v : {Variant::pair(), Variant::sort(), Variant::score()}) {
                MockGateway mg(rank_oracle_script());
                OperatorContext ctx(mg.gateway, templates());
                const auto out = lro_order(ctx, r, Requirement("Order by rank."), v);
                std::vector<std::string> pred;
                for (const auto& row : out.rows()) pred.push_back(*row[0]);
                ++runs;
                for (std::size_t k = 1; k <= n; ++k) {
                    const std::string where = v.to_string() + " n=" + std::to_string(n) + " k=" + std::to_string(k);
                    c.expect(hit_rate_at_k(pred, truth, k) == 1.0, where + ": HR@k < 1");
                    c.expect(kendall_tau_on_hits(pred, truth, k) == 1.0, where + ": tau < 1");
                }
            }
        }
    }
    return std::to_string(runs) + " PAIR/SORT/SCORE runs recover the total order";
}

std::string partition_validity(Check& c) {
    std::mt19937_64 rng(1000);
    std::size_t repaired = 0, rejected = 0;
    for (std::size_t i = 0; i - rejected < 1000; ++i) {
        const std::size_t n = 1 + rng() % 12;
        const bool one = rng() % 4 == 0;
        const std::uint64_t seed = rng();
        // Out-of-range members are not repairable; those runs must fail as malformed.
        const bool ghost = !one && rng() % 5 == 0;
        MockScript s;
        s.rule([n, seed, ghost](const ChatRequest& req) -> std::optional<MockReply> {
            std::mt19937_64 local(seed + req.tag.element_ids.at(0));
            if (req.tag.variant == "ONE") return MockReply{serialize_cluster_choice("L" + std::to_string(local() % 4))};
            std::vector<ParsedCluster> raw(1 + local() % 4);
            for (std::size_t e = 0; e < n; ++e) {
                const auto fault = local() % 10;
                if (fault == 0) continue;  // omission
                raw[local() % raw.size()].members.push_back(e);
                if (fault == 1) raw[local() % raw.size()].members.push_back(e);  // duplication
            }
            if (ghost) raw.push_back({"ghost", {n + 3}});
            if (local() % 5 == 0) raw.push_back({"empty", {}});
            for (std::size_t k = 0; k < raw.size(); ++k) raw[k].label = "c" + std::to_string(local() % 3);
            return MockReply{serialize_assignment(raw)};
        });
        MockGateway mg(s);
        OperatorContext ctx(mg.gateway, templates());
        std::vector<Row> rows;
        for (std::size_t e = 0; e < n; ++e) rows.push_back({"e" + std::to_string(e)});
        const Relation r("t", {"name"}, rows);
        if (ghost) {
            const auto kind = error_kind([&] { lro_cluster(ctx, r, Granularity::Row, Requirement("group"), Variant::all()); });
            c.expect(kind == ErrorKind::MalformedOutput, "run " + std::to_string(i) + " accepted an out-of-range member");
            ++rejected;
            continue;
        }
        const auto res = lro_cluster(ctx, r, Granularity::Row, Requirement("group"), one ? Variant::one() : Variant::all());
        std::vector<int> hits(n, 0);
        bool in_range = true, nonempty = true;
        for (const auto& cl : res.clusters) {
            nonempty = nonempty && !cl.members.empty();
            for (auto m : cl.members) {
                if (m < n) ++hits[m];
                else in_range = false;
            }
        }
        const bool disjoint_cover = std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; });
        c.expect(res.element_count == n && in_range && nonempty && disjoint_cover && res.is_partition(),
                 "run " + std::to_string(i) + " is not a partition");
        repaired += !res.warnings.empty();
    }
    return "1000 runs valid, " + std::to_string(repaired) + " needed repair, " +
           std::to_string(rejected) + " out-of-range replies rejected";
}

std::string batching_degeneracy(Check& c) {
    std::mt19937_64 rng(20);
    // Keep rows whose x is divisible by 3; impute x mod 7.
    MockScript s;
    s.rule([](const ChatRequest& r) -> std::optional<MockReply> {
        const auto xs = field_values(r.user, "x");
        if (r.tag.op == "select") {
            if (r.tag.variant == "ONE") return MockReply{serialize_verdict(PromptShape::SelectOne, std::stol(xs.at(0)) % 3 == 0)};
            std::vector<std::size_t> keep;
            for (std::size_t i = 0; i < xs.size(); ++i) {
                if (std::stol(xs[i]) % 3 == 0) keep.push_back(i);
            }
            return MockReply{serialize_indices(PromptShape::SelectAll, keep)};
        }
        std::vector<Cell> values;
        for (const auto& x : xs) values.push_back(std::to_string(std::stol(x) % 7));
        if (r.tag.variant == "ONE") return MockReply{serialize_cells(PromptShape::ImputeColumnOne, values)};
        return MockReply{serialize_cells(PromptShape::ImputeColumnAll, values)};
    });
    auto requests = [](const MockGateway& mg) {
        std::vector<std::string> out;
        for (const auto& r : mg.backend->seen_requests()) out.push_back(r.system + "\n---\n" + r.user);
        return out;
    };
    std::size_t tasks = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t n = 1 + rng() % 20;
        const auto r = numbered(n, rng);
        const std::string where = " (n=" + std::to_string(n) + ")";
        const Requirement l("x is divisible by 3");
        const Requirement li("x modulo 7");

        MockGateway one(s), b1(s), all(s), bn(s);
        OperatorContext c1(one.gateway, templates()), c2(b1.gateway, templates()), c3(all.gateway, templates()),
            c4(bn.gateway, templates());
        c.expect(lro_select(c1, r, Granularity::Row, l, Variant::one()) ==
                     lro_select(c2, r, Granularity::Row, l, Variant::batched(1)),
                 "select BATCH(1) != ONE" + where);
        lro_select(c3, r, Granularity::Row, l, Variant::all());
        lro_select(c4, r, Granularity::Row, l, Variant::batched(n));
        c.expect(requests(all) == requests(bn) && requests(all).size() == 1, "select BATCH(n) prompt != ALL" + where);

        MockGateway ione(s), ib1(s), iall(s), ibn(s);
        OperatorContext d1(ione.gateway, templates()), d2(ib1.gateway, templates()), d3(iall.gateway, templates()),
            d4(ibn.gateway, templates());
        const ImputeSpec spec{"x_mod_7", 0};
        c.expect(lro_impute(d1, r, Granularity::Column, li, Variant::one(), spec) ==
                     lro_impute(d2, r, Granularity::Column, li, Variant::batched(1), spec),
                 "impute BATCH(1) != ONE" + where);
        const auto via_all = lro_impute(d3, r, Granularity::Column, li, Variant::all(), spec);
        const auto via_bn = lro_impute(d4, r, Granularity::Column, li, Variant::batched(n), spec);
        c.expect(requests(iall) == requests(ibn) && requests(iall).size() == 1, "impute BATCH(n) prompt != ALL" + where);
        c.expect(via_all == via_bn, "impute BATCH(n) output != ALL" + where);
        tasks += 2;
    }
    return std::to_string(tasks) + " randomized select/impute tasks with n <= 20";
}

std::string gateway_contract(Check& c) {
    std::size_t peak_default = 0;
    {
        MockScript s;
        s.rule([](const ChatRequest& r) -> std::optional<MockReply> {
            std::mt19937 local(static_cast<unsigned>(r.tag.element_ids.at(0)));
            return MockReply{"ok", std::chrono::milliseconds(1 + local() % 15)};
        });
        MockGateway mg(s);
        std::vector<ChatRequest> reqs;
        for (std::size_t i = 0; i < 120; ++i) reqs.push_back({"s", "u" + std::to_string(i), {"select", "ONE", {i}, {}}});
        const auto resp = mg.gateway.complete_many(reqs);
        peak_default = mg.backend->max_in_flight();
        c.expect(BackendConfig{}.parallelism == 10, "default parallelism is not 10");
        c.expect(peak_default <= 10, "in flight reached " + std::to_string(peak_default));
        c.expect(peak_default >= 2, "requests never overlapped");
        c.expect(resp.size() == 120 && mg.gateway.ledger().calls() == 120, "lost responses");
    }
    for (std::size_t cap : {1u, 3u, 7u}) {
        MockScript s;
        s.rule([](const ChatRequest& r) -> std::optional<MockReply> {
            return MockReply{"ok", std::chrono::milliseconds(1 + r.tag.element_ids.at(0) * 7 % 9)};
        });
        BackendConfig cfg;
        cfg.parallelism = cap;
        MockGateway mg(s, cfg);
        std::vector<ChatRequest> reqs;
        for (std::size_t i = 0; i < 40; ++i) reqs.push_back({"s", "u", {"select", "ONE", {i}, {}}});
        mg.gateway.complete_many(reqs);
        c.expect(mg.backend->max_in_flight() <= cap,
                 "cap " + std::to_string(cap) + " exceeded: " + std::to_string(mg.backend->max_in_flight()));
    }
    c.expect(BackendConfig{}.timeout == std::chrono::minutes(30), "default timeout is not 30 minutes");

    // A query whose model is slower than the per-query timeout ends as a timeout.
    BackendConfig cfg;
    cfg.timeout = std::chrono::milliseconds(200);
    MockGateway mg(auto_script(), cfg);
    QuerySpec slow;
    slow.id = "slow";
    slow.plan = "SELECT * FROM T WHERE LLM_SELECT('row', 'keep');";
    slow.ground_truth = csv("k\n1\n", "T");
    slow.mock = R"({"default": {"text": "{\"keep\": true}", "delay_ms": 3000}})";
    QuerySpec fast = slow;
    fast.id = "fast";
    fast.mock.reset();
    const auto start = Clock::now();
    const auto rep = run_suite({slow, fast}, Database({csv("k\n1\n", "T")}), mg.gateway, templates(), {});
    const double ms = ms_since(start);
    c.expect(rep.queries.at(0).outcome == Outcome::Timeout, std::string("slow query outcome: ") + to_string(rep.queries[0].outcome));
    c.expect(rep.queries.at(1).outcome == Outcome::Pass, "fast query did not pass");
    c.expect(ms < 2500.0, "timed-out query was not aborted promptly (" + fmt(ms) + " ms)");
    return "peak in flight " + std::to_string(peak_default) + "/10 over 120 requests; slow query -> " +
           to_string(rep.queries.at(0).outcome);
}

std::string stratification(Check& c) {
    std::size_t combos = 0;
    for (int lro : {2, 3}) {
        for (int t = 1; t <= 3; ++t) {
            for (int h = 1; h <= 3; ++h) {
                for (int k = 1; k <= 3; ++k) {
                    const auto s = stratify({lro, t, h, k});
                    const int expected_lro = lro == 2 ? 1 : 3;
                    const int overall = expected_lro + t + h + k;
                    const std::string bucket = overall <= 5 ? "easy" : overall <= 8 ? "medium" : "hard";
                    c.expect(s.lro == expected_lro && s.overall == overall && overall >= 4 && overall <= 12 &&
                                 s.bucket == bucket,
                             "annotations " + std::to_string(lro) + std::to_string(t) + std::to_string(h) +
                                 std::to_string(k));
                    ++combos;
                }
            }
        }
    }
    c.expect(stratify({2, 1, 1, 1}).overall == 4 && stratify({3, 3, 3, 3}).overall == 12, "range endpoints");

    const auto table = csv("k,v\n1,a\n2,b\n3,c\n", "T");
    std::vector<QuerySpec> specs;
    std::mt19937 rng(60);
    for (int i = 0; i < 60; ++i) {
        QuerySpec q;
        q.id = "q" + std::to_string(i);
        q.plan = "SELECT * FROM T WHERE LLM_SELECT('row', 'keep') ORDER BY LLM_ORDER('row', 'as is');";
        q.ground_truth = i % 15 >= 2 ? table : csv("k,v\n3,c\n");
        q.annotations = {2 + int(rng() % 2), 1 + int(rng() % 3), 1 + int(rng() % 3), 1 + int(rng() % 3)};
        specs.push_back(q);
    }
    MockGateway mg(auto_script());
    const auto rep = run_suite(specs, Database({table}), mg.gateway, templates(), {});
    const double pct = rep.accuracy() * 100.0;
    c.expect(rep.passes() == 52, "passes: " + std::to_string(rep.passes()));
    c.expect(std::abs(pct - 86.67) <= 0.01, "accuracy " + format_percent(rep.accuracy()));
    c.expect(format_percent(rep.accuracy()) == "86.67%", "formatted as " + format_percent(rep.accuracy()));
    return std::to_string(combos) + " annotation combos; suite " + std::to_string(rep.passes()) + "/60 = " +
           format_percent(rep.accuracy());
}

std::string scale_oracle(Check& c) {
    const auto players = synthetic_players(400);
    std::string detail;
    for (auto task : {SweepTask::SelectRow, SweepTask::ImputeColumn}) {
        SweepConfig cfg;
        cfg.task = task;
        cfg.scales = {10, 50, 100, 200, 400};
        cfg.batches = {0, 1, 10, 50};
        cfg.repeats = 3;
        Gateway oracle_gw(BackendConfig{}, make_rule_backend(task));
        const auto clean = sweep(cfg, players, oracle_gw, templates());
        std::map<std::size_t, std::int64_t> all_tokens;  // scale -> ALL prompt tokens
        for (const auto& r : clean) {
            c.expect(r.outcome == RunOutcome::Ok && r.quality == 1.0,
                     std::string(to_string(task)) + " oracle quality " + fmt(r.quality) + " at scale " +
                         std::to_string(r.scale) + " batch " + batch_label(r.batch));
            if (r.batch == 0) all_tokens[r.scale] = r.input_tokens;
        }

        cfg.repeats = 10;
        Gateway faulty_gw(BackendConfig{}, make_rule_backend(task, "birthdate", 2000));
        const auto faulty = sweep(cfg, players, faulty_gw, templates());
        std::size_t all_failing = 0, all_passing = 0;
        for (const auto& r : faulty) {
            const std::string where = std::string(to_string(task)) + " scale " + std::to_string(r.scale) + " batch " +
                                      batch_label(r.batch);
            if (r.batch == 0) {
                const bool over = all_tokens.at(r.scale) > 2000;
                c.expect(over ? r.quality == 0.0 : r.quality == 1.0, where + ": quality " + fmt(r.quality));
                (over ? all_failing : all_passing) += 1;
            } else if (r.batch == 50) {
                c.expect(r.quality == 1.0, where + ": quality " + fmt(r.quality));
            }
        }
        c.expect(all_failing > 0 && all_passing > 0, std::string(to_string(task)) + ": threshold not crossed");
        std::size_t first_fail = 0;
        for (const auto& [scale, tokens] : all_tokens) {
            if (tokens > 2000 && !first_fail) first_fail = scale;
        }
        detail += std::string(detail.empty() ? "" : "; ") + to_string(task) + ": ALL fails from scale " +
                  std::to_string(first_fail) + ", BATCH(50) stays 1.0";
    }
    return detail;
}

std::string cli_determinism(Check& c) {
    const std::string bin = LRO_BINARY;
    const auto work = std::filesystem::temp_directory_path() / "lro_acceptance_cli";
    std::filesystem::remove_all(work);
    std::filesystem::create_directories(work);
    auto q = [](const std::filesystem::path& p) { return "'" + p.string() + "'"; };
    const std::string db = q(kSamples / "db");

    const std::vector<std::pair<std::string, std::string>> commands{
        {"op", "op --op select -g column --variant ALL -i " + q(kSamples / "db" / "Restaurants.csv") +
                   " -l 'It is related to the restaurant atmosphere.' --mock " + q(kSamples / "select_columns.mock.json")},
        {"plan", "plan -p " + q(kSamples / "bay_area.plan") + " --db " + db + " --mock " +
                     q(kSamples / "bay_area.mock.json") + " --trace {dir}/trace.json"},
        {"bench", "bench -s " + q(kSamples / "suite") + " --db " + db + " -o {dir}"},
        {"sweep", "sweep --task impute_column --scales 10,40 --batches ONE,ALL,10 --repeats 2 --synthetic 40 "
                  "--oracle -o {dir}"},
    };
    std::size_t compared = 0;
    for (const auto& [name, args] : commands) {
        std::vector<std::map<std::string, std::string>> runs;
        for (int i = 0; i < 3; ++i) {
            const auto dir = work / (name + std::to_string(i));
            std::filesystem::create_directories(dir);
            std::string a = args;
            for (auto pos = a.find("{dir}"); pos != std::string::npos; pos = a.find("{dir}")) {
                a.replace(pos, 5, dir.string());
            }
            const std::string cmd = q(bin) + " " + a + " > " + q(dir / "stdout.txt") + " 2> " + q(dir / "stderr.txt");
            const int status = std::system(cmd.c_str());
            c.expect(status == 0, name + " run " + std::to_string(i) + " exited with status " + std::to_string(status));
            std::map<std::string, std::string> files;
            for (const auto& e : std::filesystem::directory_iterator(dir)) files[e.path().filename().string()] = slurp(e.path());
            runs.push_back(std::move(files));
        }
        for (int i = 1; i < 3; ++i) {
            c.expect(runs[i] == runs[0], name + " run " + std::to_string(i) + " differs from run 0");
            compared += runs[0].size();
        }
    }
    return std::to_string(commands.size()) + " subcommands x 3 runs, " + std::to_string(compared) +
           " file comparisons byte-identical";
}

}  // namespace

int main() {
    run(1, "metric oracle equivalence", metric_oracles);
    run(2, "call-count laws", call_count_laws);
    run(3, "best-practice dispatcher", best_practice);
    run(4, "worked examples end to end", paper_examples);
    run(5, "ranking fidelity", ranking_fidelity);
    run(6, "partition validity", partition_validity);
    run(7, "batching degeneracy", batching_degeneracy);
    run(8, "gateway contract", gateway_contract);
    run(9, "stratification and headline accuracy", stratification);
    run(10, "scale oracle and fault shape", scale_oracle);
    run(11, "CLI determinism", cli_determinism);
    std::cout << (g_failed ? "FAILED " : "ALL PASSED ") << (11 - g_failed) << "/11\n";
    return g_failed ? 1 : 0;
}
