#include "doctest.h"

#include "helpers.hpp"
#include "lro/cli.hpp"

#include "json.hpp"

#include <fstream>
#include <sstream>

using namespace lro;
using namespace lro::test;
using nlohmann::json;

namespace {

const std::filesystem::path kSamples = std::filesystem::path(LRO_SOURCE_DIR) / "samples";

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

Run lro_run(std::vector<std::string> args) {
    args.insert(args.begin(), "lro");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t line_count(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

std::string s(const std::filesystem::path& p) { return p.string(); }

// Suite of `n` two-operator queries over T(k, v); the first `passing` match.
std::filesystem::path write_suite(const std::string& name, std::size_t n, std::size_t passing) {
    const auto dir = temp_dir(name);
    std::filesystem::create_directories(dir / "db");
    std::ofstream(dir / "db" / "T.csv") << "k,v\n1,a\n2,b\n3,c\n";
    json specs = json::array();
    for (std::size_t i = 0; i < n; ++i) {
        json rows = json::array();
        if (i < passing) {
            for (const char* k : {"1", "2", "3"}) rows.push_back(json::array({k, std::string(1, char('a' + (k[0] - '1')))}));
        } else {
            rows.push_back(json::array({"3", "c"}));
        }
        specs.push_back({{"id", "q" + std::to_string(i)},
                         {"plan", "SELECT * FROM T WHERE LLM_SELECT('row', 'keep') ORDER BY LLM_ORDER('row', 'as is');"},
                         {"ground_truth", {{"columns", {"k", "v"}}, {"rows", rows}}},
                         {"annotations",
                          {{"table_count", 1 + i % 3}, {"hop_count", 1 + i % 2}, {"knowledge_level", 1 + (i / 3) % 3}}}});
    }
    std::ofstream(dir / "suite.json") << specs.dump(2);
    json mock = {{"rules",
                  {{{"op", "select"}, {"variant", "ONE"}, {"respond", serialize_verdict(PromptShape::SelectOne, true)}},
                   {{"op", "order"}, {"respond", serialize_ranking({0, 1, 2})}}}}};
    std::ofstream(dir / "mock.json") << mock.dump(2);
    return dir;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("exit code mapping") {
    CHECK(exit_code_for(ErrorKind::Domain) == 1);
    CHECK(exit_code_for(ErrorKind::Parse) == 1);
    CHECK(exit_code_for(ErrorKind::Io) == 1);
    CHECK(exit_code_for(ErrorKind::MalformedOutput) == 1);
    CHECK(exit_code_for(ErrorKind::ContextOverflow) == 1);
    CHECK(exit_code_for(ErrorKind::Usage) == 2);
    CHECK(exit_code_for(ErrorKind::Backend) == 3);
    CHECK(exit_code_for(ErrorKind::Timeout) == 3);
}

TEST_CASE("help and bad flags") {
    CHECK(lro_run({"--help"}).code == 0);
    CHECK(lro_run({}).code == 2);
    CHECK(lro_run({"op", "--frobnicate"}).code == 2);
    CHECK(lro_run({"dance"}).code == 2);
}

TEST_CASE("op selects the description column") {
    const auto r = lro_run({"op", "--op", "select", "-g", "column", "--variant", "ALL", "-i",
                            s(kSamples / "db" / "Restaurants.csv"), "-l",
                            "It is related to the restaurant atmosphere.", "--mock",
                            s(kSamples / "select_columns.mock.json")});
    CHECK(r.code == 0);
    CHECK(r.out.rfind("Description\n", 0) == 0);
    CHECK(line_count(r.out) == 7);
    CHECK(r.err.find("calls: 1") != std::string::npos);
}

TEST_CASE("op errors") {
    const auto mock = s(kSamples / "select_columns.mock.json");
    const auto input = s(kSamples / "db" / "Restaurants.csv");
    auto r = lro_run({"op", "--op", "order", "-g", "cell", "-i", input, "-l", "x", "--mock", mock});
    CHECK(r.code == 2);
    CHECK_FALSE(r.err.empty());
    r = lro_run({"op", "--op", "select", "-g", "row", "--variant", "PAIR", "-i", input, "-l", "x", "--mock", mock});
    CHECK(r.code == 2);
    r = lro_run({"op", "--op", "select", "-g", "row", "-i", "/nonexistent/x.csv", "-l", "x", "--mock", mock});
    CHECK(r.code == 1);
    r = lro_run({"op", "--op", "select", "-g", "row", "-i", input, "-l", "x"});
    CHECK(r.code == 3);
    r = lro_run({"op", "--op", "select", "-g", "row", "-i", input, "-l", "x", "--mock", "/nonexistent/m.json"});
    CHECK(r.code == 1);
}

TEST_CASE("plan runs the bay area example deterministically") {
    const std::vector<std::string> args{"plan", "-p", s(kSamples / "bay_area.plan"), "--db", s(kSamples / "db"),
                                        "--mock", s(kSamples / "bay_area.mock.json")};
    const auto a = lro_run(args);
    CHECK(a.code == 0);
    CHECK(a.out == "Name\nAlley Wok\n");
    const auto b = lro_run(args);
    CHECK(b.out == a.out);
    CHECK(b.err == a.err);

    const auto trace = temp_dir("cli_trace") / "trace.json";
    auto withtrace = args;
    withtrace.insert(withtrace.end(), {"--trace", s(trace), "--format", "json"});
    const auto c = lro_run(withtrace);
    CHECK(c.code == 0);
    CHECK(json::parse(c.out) == json::parse(R"([{"Name": "Alley Wok"}])"));
    CHECK(json::parse(slurp(trace)).size() >= 1);
}

TEST_CASE("plan errors and classical plans") {
    const auto db = s(kSamples / "db");
    auto r = lro_run({"plan", "-q", "SELECT Name FROM Restaurants WHERE LLM_SELECT('row' 'x');", "--db", db});
    CHECK(r.code == 1);
    CHECK(r.err.find("1:") != std::string::npos);
    r = lro_run({"plan", "-q", "SELECT Name FROM Restaurants WHERE Price < 20;", "--db", db});
    CHECK(r.code == 0);
    CHECK(r.err.find("calls: 0") != std::string::npos);
    r = lro_run({"plan", "-q", "SELECT Nope FROM Restaurants;", "--db", db});
    CHECK(r.code == 1);
    r = lro_run({"plan", "--db", db});
    CHECK(r.code == 2);
}

TEST_CASE("bench on an empty suite") {
    const auto dir = temp_dir("cli_empty");
    std::ofstream(dir / "suite.json") << "[]";
    const auto r = lro_run({"bench", "-s", s(dir / "suite.json"), "-o", s(dir / "out")});
    CHECK(r.code == 0);
    const auto j = json::parse(slurp(dir / "out" / "report.json"));
    CHECK(j.at("total") == 0);
    CHECK(j.at("queries").empty());
}

TEST_CASE("bench prints the accuracy it reports") {
    const auto dir = write_suite("cli_bench", 60, 52);
    const auto r = lro_run({"bench", "-s", s(dir / "suite.json"), "--db", s(dir / "db"), "--mock", s(dir / "mock.json"),
                            "-o", s(dir / "out")});
    CHECK(r.code == 0);
    const auto j = json::parse(slurp(dir / "out" / "report.json"));
    CHECK(j.at("accuracy_percent") == "86.67%");
    CHECK(r.out.find("accuracy: " + j.at("accuracy_percent").get<std::string>()) != std::string::npos);
    CHECK(line_count(slurp(dir / "out" / "queries.csv")) == 61);

    const auto again = lro_run({"report", "--in", s(dir / "out")});
    CHECK(again.code == 0);
    CHECK(again.out == r.out);
}

TEST_CASE("flags override the config file") {
    const auto dir = write_suite("cli_precedence", 2, 2);
    std::ofstream(dir / "lro.toml") << "[backend]\nkind = \"mock\"\nmock_script = \"mock.json\"\nmodel = \"file-model\"\n"
                                       "[bench]\neasy_max = 3\nmedium_max = 7\n";
    auto r = lro_run({"--config", s(dir / "lro.toml"), "bench", "-s", s(dir / "suite.json"), "--db", s(dir / "db"),
                      "-o", s(dir / "a")});
    CHECK(r.code == 0);
    auto j = json::parse(slurp(dir / "a" / "report.json"));
    CHECK(j.at("model") == "file-model");
    CHECK(j.at("thresholds").at("easy_max") == 3);
    r = lro_run({"--config", s(dir / "lro.toml"), "bench", "-s", s(dir / "suite.json"), "--db", s(dir / "db"), "-o",
                 s(dir / "b"), "--model", "flag-model", "--easy-max", "4"});
    CHECK(r.code == 0);
    j = json::parse(slurp(dir / "b" / "report.json"));
    CHECK(j.at("model") == "flag-model");
    CHECK(j.at("thresholds").at("easy_max") == 4);
    CHECK(j.at("thresholds").at("medium_max") == 7);

    std::ofstream(dir / "bad.toml") << "[backend]\nparallelism = 0\n";
    CHECK(lro_run({"--config", s(dir / "bad.toml"), "plan", "-q", "SELECT * FROM T;", "--db", s(dir / "db")}).code == 2);
}

TEST_CASE("sweep writes one record per run") {
    const auto dir = temp_dir("cli_sweep");
    const auto r = lro_run({"sweep", "--task", "select_row", "--scales", "20,40", "--batches", "ALL,10", "--repeats",
                            "10", "--synthetic", "40", "--oracle", "-o", s(dir)});
    CHECK(r.code == 0);
    CHECK(line_count(slurp(dir / "sweep.csv")) == 41);
    CHECK(line_count(slurp(dir / "curve.csv")) == 5);
    CHECK(r.out == slurp(dir / "curve.csv"));
    CHECK(lro_run({"sweep", "--scales", "40,20", "--batches", "ALL", "--oracle", "-o", s(dir)}).code == 2);
    CHECK(lro_run({"sweep", "--scales", "20", "--batches", "ALL", "-o", s(dir)}).code == 3);
}

}  // TEST_SUITE
