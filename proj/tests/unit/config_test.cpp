#include "doctest.h"

#include "helpers.hpp"
#include "lro/config.hpp"

#include <fstream>

using namespace lro;
using namespace lro::test;

TEST_SUITE("config") {

TEST_CASE("defaults") {
    const AppConfig cfg = parse_config("");
    CHECK(cfg.backend.kind == "none");
    CHECK(cfg.backend.config.temperature == 0.0);
    CHECK(cfg.backend.config.max_context_tokens == 20480);
    CHECK(cfg.backend.config.parallelism == 10);
    CHECK(cfg.backend.config.timeout == std::chrono::minutes(30));
    CHECK(cfg.thresholds.easy_max == 5);
    CHECK(cfg.thresholds.medium_max == 8);
    CHECK_FALSE(cfg.judge);
    CHECK(cfg.allow_degrade);
    CHECK_FALSE(cfg.prompt.cot);
    CHECK(cfg.sweep.repeats == 10);
}

TEST_CASE("full file") {
    const auto cfg = parse_config(R"(
[backend]
kind = "mock"
mock_script = "scripts/m.json"
model = "task-model"
parallelism = 4
timeout_seconds = 1.5
max_context_tokens = 8000

[judge]
kind = "mock"
mock_script = "/abs/judge.json"
model = "judge-model"

[prices."task-model"]
input_per_million = 0.5
output_per_million = 1.5

[prompts]
cot = true
examples = true
example_count = 2
templates_dir = "tmpl"
allow_degrade = false

[bench]
easy_max = 4
medium_max = 9
concurrent = true

[sweep]
task = "impute_column"
scales = [100, 200]
batches = ["ALL", 1, 50]
repeats = 3
date_column = "dob"
)",
                                  "/base");
    CHECK(cfg.backend.kind == "mock");
    CHECK(cfg.backend.mock_script == std::filesystem::path("/base/scripts/m.json"));
    CHECK(cfg.backend.config.parallelism == 4);
    CHECK(cfg.backend.config.timeout == std::chrono::milliseconds(1500));
    CHECK(cfg.backend.config.max_context_tokens == 8000);
    REQUIRE(cfg.judge);
    CHECK(cfg.judge->mock_script == std::filesystem::path("/abs/judge.json"));
    CHECK(cfg.judge->config.parallelism == 4);
    CHECK(cfg.prices.at("task-model").output_per_million == 1.5);
    CHECK(cfg.prompt.cot);
    CHECK(cfg.prompt.example_count == 2);
    CHECK(cfg.templates_dir == std::filesystem::path("/base/tmpl"));
    CHECK_FALSE(cfg.allow_degrade);
    CHECK(cfg.thresholds.easy_max == 4);
    CHECK(cfg.bench_concurrent);
    CHECK(cfg.sweep.task == SweepTask::ImputeColumn);
    CHECK(cfg.sweep.batches == std::vector<std::size_t>{0, 1, 50});
    CHECK(cfg.sweep.date_column == "dob");
}

TEST_CASE("rejected settings") {
    for (const char* text : {
             "[backend]\nkind = \"carrier pigeon\"\n",
             "[backend]\nkind = \"mock\"\n",
             "[backend]\nmodle = \"x\"\n",
             "[extra]\n",
             "[backend]\nparallelism = 0\n",
             "[backend]\nparallelism = -2\n",
             "[backend]\nparallelism = \"ten\"\n",
             "[judge]\nkind = \"mock\"\nmock_script = \"j.json\"\nmodel = \"mock\"\n",
             "[judge]\nkind = \"mock\"\nmock_script = \"j.json\"\n",
             "[bench]\neasy_max = 8\nmedium_max = 8\n",
             "[prices.m]\ninput_per_million = -1.0\n",
             "[sweep]\ntask = \"dance\"\n",
             "[sweep]\nscales = [1, -3]\n",
             "not toml at all = = =",
         }) {
        INFO(text);
        CHECK(error_kind([&] { parse_config(text); }) == ErrorKind::Usage);
    }
    CHECK(error_kind([] { load_config("/nonexistent/lro.toml"); }) == ErrorKind::Io);
}

TEST_CASE("backends from sections") {
    BackendSection none;
    auto b = make_backend(none);
    Gateway gw(BackendConfig{}, b);
    CHECK(error_kind([&] {
              gw.complete(ChatRequest{"s", "u", RequestTag{"select", "ONE", {0}, {}}});
          }) == ErrorKind::Backend);

    const auto dir = temp_dir("config_mock");
    std::ofstream(dir / "m.json") << R"({"default": "hello"})";
    std::ofstream(dir / "lro.toml") << "[backend]\nkind = \"mock\"\nmock_script = \"m.json\"\n";
    const auto cfg = load_config(dir / "lro.toml");
    Gateway mock(cfg.backend.config, make_backend(cfg.backend));
    CHECK(mock.complete(ChatRequest{"s", "u", RequestTag{"select", "ONE", {0}, {}}}).text == "hello");
    CHECK(load_templates(cfg).get(PromptShape::SelectOne) == templates().get(PromptShape::SelectOne));
}

}  // TEST_SUITE
