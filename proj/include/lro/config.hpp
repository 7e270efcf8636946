#pragma once

#include "lro/bench.hpp"
#include "lro/llm_gateway.hpp"
#include "lro/prompt_kit.hpp"
#include "lro/scale_lab.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

namespace lro {

/// Which backend a gateway talks to.
///   none   - any LLM call fails; classical plans still run
///   mock   - scripted replies from `mock_script`
///   openai - OpenAI-compatible HTTP endpoint
struct BackendSection {
    std::string kind = "none";
    std::filesystem::path mock_script;
    BackendConfig config;
};

/// Everything the TOML file can set. Values not present keep their defaults.
///
///   [backend]  kind, mock_script, endpoint, model, temperature, max_context_tokens,
///              parallelism, timeout_seconds, transport_retries, malformed_retries, api_key_env
///   [judge]    same keys as [backend]
///   [prices."model"]  input_per_million, output_per_million
///   [prompts]  templates_dir, cot, examples, example_count, allow_degrade
///   [bench]    easy_max, medium_max, concurrent
///   [sweep]    task, scales, batches, repeats, timeout_seconds, date_column, new_column, requirement
struct AppConfig {
    BackendSection backend;
    std::optional<BackendSection> judge;
    PriceTable prices;
    PromptOptions prompt;
    std::filesystem::path templates_dir;
    bool allow_degrade = true;
    BucketThresholds thresholds;
    bool bench_concurrent = false;
    SweepConfig sweep;

    /// Throws Error(Usage) for inconsistent settings. Makes no network calls.
    void validate() const;
};

/// Relative paths resolve against `base_dir`.
AppConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir = {});
AppConfig load_config(const std::filesystem::path& path);

std::shared_ptr<ChatBackend> make_backend(const BackendSection& section);
PromptTemplates load_templates(const AppConfig& cfg);

}  // namespace lro
