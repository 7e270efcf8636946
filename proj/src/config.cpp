#include "lro/config.hpp"

#include "lro/error.hpp"

#include "toml.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace lro {

namespace {

class NoBackend : public ChatBackend {
public:
    ChatResponse send(const BackendConfig&, const ChatRequest& req, const CallInfo&, const CancelToken&) override {
        fail(ErrorKind::Backend, "no LLM backend configured for " + req.tag.to_string() +
                                     "; pass --mock or set [backend] kind");
    }
};

void check_keys(const toml::table& t, const std::string& section, const std::set<std::string>& known) {
    for (const auto& [k, v] : t) {
        if (!known.count(std::string(k.str()))) {
            fail(ErrorKind::Usage, "unknown key '" + std::string(k.str()) + "' in [" + section + "]");
        }
    }
}

template <class T>
std::optional<T> get(const toml::table& t, const char* key, const std::string& section) {
    const auto node = t[key];
    if (!node) return std::nullopt;
    if constexpr (std::is_same_v<T, double>) {
        if (auto v = node.value<double>()) return *v;
    } else if constexpr (std::is_same_v<T, bool>) {
        if (node.is_boolean()) return node.value<bool>();
    } else if constexpr (std::is_integral_v<T>) {
        if (node.is_integer()) {
            const auto v = *node.value<std::int64_t>();
            if (v < 0) fail(ErrorKind::Usage, std::string("[") + section + "] " + key + " must be non-negative");
            return static_cast<T>(v);
        }
    } else {
        if (node.is_string()) return *node.value<std::string>();
    }
    fail(ErrorKind::Usage, std::string("[") + section + "] " + key + " has the wrong type");
}

std::vector<std::size_t> size_list(const toml::table& t, const char* key, const std::string& section) {
    std::vector<std::size_t> out;
    const auto* arr = t[key].as_array();
    if (!arr) fail(ErrorKind::Usage, std::string("[") + section + "] " + key + " must be an array of integers");
    for (const auto& v : *arr) {
        if (v.is_string() && (*v.value<std::string>() == "ALL" || *v.value<std::string>() == "all")) {
            out.push_back(0);
            continue;
        }
        const auto n = v.value<std::int64_t>();
        if (!v.is_integer() || *n < 0) {
            fail(ErrorKind::Usage, std::string("[") + section + "] " + key + " must hold non-negative integers");
        }
        out.push_back(static_cast<std::size_t>(*n));
    }
    return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base.empty() ? base / path : path;
}

BackendSection backend_section(const toml::table& t, const std::string& name, const std::filesystem::path& base,
                               BackendSection s) {
    check_keys(t, name,
               {"kind", "mock_script", "endpoint", "model", "temperature", "max_context_tokens", "parallelism",
                "timeout_seconds", "transport_retries", "malformed_retries", "api_key_env"});
    if (auto v = get<std::string>(t, "kind", name)) s.kind = *v;
    if (auto v = get<std::string>(t, "mock_script", name)) s.mock_script = resolve(base, *v);
    if (auto v = get<std::string>(t, "endpoint", name)) s.config.endpoint = *v;
    if (auto v = get<std::string>(t, "model", name)) s.config.model = *v;
    if (auto v = get<double>(t, "temperature", name)) s.config.temperature = *v;
    if (auto v = get<std::size_t>(t, "max_context_tokens", name)) s.config.max_context_tokens = *v;
    if (auto v = get<std::size_t>(t, "parallelism", name)) s.config.parallelism = *v;
    if (auto v = get<double>(t, "timeout_seconds", name)) {
        s.config.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(*v * 1000.0));
    }
    if (auto v = get<std::size_t>(t, "transport_retries", name)) s.config.transport_retries = static_cast<int>(*v);
    if (auto v = get<std::size_t>(t, "malformed_retries", name)) s.config.malformed_retries = static_cast<int>(*v);
    if (auto v = get<std::string>(t, "api_key_env", name)) s.config.api_key_env = *v;
    return s;
}

const toml::table* section(const toml::table& root, const char* name) {
    const auto node = root[name];
    if (!node) return nullptr;
    if (!node.is_table()) fail(ErrorKind::Usage, std::string("[") + name + "] must be a table");
    return node.as_table();
}

}  // namespace

void AppConfig::validate() const {
    auto check = [](const BackendSection& s, const char* name) {
        if (s.kind != "none" && s.kind != "mock" && s.kind != "openai") {
            fail(ErrorKind::Usage, std::string("[") + name + "] kind must be none, mock or openai");
        }
        if (s.kind == "mock" && s.mock_script.empty()) {
            fail(ErrorKind::Usage, std::string("[") + name + "] kind = \"mock\" needs mock_script");
        }
        s.config.validate();
    };
    check(backend, "backend");
    if (judge) {
        check(*judge, "judge");
        if (judge->config.model == backend.config.model) {
            fail(ErrorKind::Usage, "judge model must differ from the task model");
        }
    }
    prompt.validate();
    if (thresholds.easy_max >= thresholds.medium_max) {
        fail(ErrorKind::Usage, "bucket thresholds must satisfy easy_max < medium_max");
    }
    for (const auto& [model, price] : prices) {
        if (price.input_per_million < 0 || price.output_per_million < 0) {
            fail(ErrorKind::Usage, "negative price for model '" + model + "'");
        }
    }
}

AppConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir) {
    toml::table root;
    try {
        root = toml::parse(toml_text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
        fail(ErrorKind::Usage, "config: " + msg.str());
    }
    check_keys(root, "top level", {"backend", "judge", "prices", "prompts", "bench", "sweep"});
    AppConfig cfg;
    if (const auto* t = section(root, "backend")) cfg.backend = backend_section(*t, "backend", base_dir, cfg.backend);
    if (const auto* t = section(root, "judge")) {
        BackendSection j;
        j.config = cfg.backend.config;
        j.config.model.clear();
        cfg.judge = backend_section(*t, "judge", base_dir, j);
        if (cfg.judge->config.model.empty()) fail(ErrorKind::Usage, "[judge] needs a model");
    }
    if (const auto* t = section(root, "prices")) {
        for (const auto& [model, node] : *t) {
            const auto* p = node.as_table();
            const std::string name = "prices." + std::string(model.str());
            if (!p) fail(ErrorKind::Usage, "[" + name + "] must be a table");
            check_keys(*p, name, {"input_per_million", "output_per_million"});
            Price price;
            price.input_per_million = get<double>(*p, "input_per_million", name).value_or(0.0);
            price.output_per_million = get<double>(*p, "output_per_million", name).value_or(0.0);
            cfg.prices[std::string(model.str())] = price;
        }
    }
    if (const auto* t = section(root, "prompts")) {
        check_keys(*t, "prompts", {"templates_dir", "cot", "examples", "example_count", "allow_degrade"});
        if (auto v = get<std::string>(*t, "templates_dir", "prompts")) cfg.templates_dir = resolve(base_dir, *v);
        if (auto v = get<bool>(*t, "cot", "prompts")) cfg.prompt.cot = *v;
        if (auto v = get<bool>(*t, "examples", "prompts")) cfg.prompt.examples = *v;
        if (auto v = get<std::size_t>(*t, "example_count", "prompts")) cfg.prompt.example_count = *v;
        if (auto v = get<bool>(*t, "allow_degrade", "prompts")) cfg.allow_degrade = *v;
    }
    if (const auto* t = section(root, "bench")) {
        check_keys(*t, "bench", {"easy_max", "medium_max", "concurrent"});
        if (auto v = get<std::size_t>(*t, "easy_max", "bench")) cfg.thresholds.easy_max = static_cast<int>(*v);
        if (auto v = get<std::size_t>(*t, "medium_max", "bench")) cfg.thresholds.medium_max = static_cast<int>(*v);
        if (auto v = get<bool>(*t, "concurrent", "bench")) cfg.bench_concurrent = *v;
    }
    if (const auto* t = section(root, "sweep")) {
        check_keys(*t, "sweep",
                   {"task", "scales", "batches", "repeats", "timeout_seconds", "date_column", "new_column",
                    "requirement"});
        auto& s = cfg.sweep;
        if (auto v = get<std::string>(*t, "task", "sweep")) {
            const auto task = parse_sweep_task(*v);
            if (!task) fail(ErrorKind::Usage, "[sweep] task must be select_row or impute_column");
            s.task = *task;
        }
        if ((*t)["scales"]) s.scales = size_list(*t, "scales", "sweep");
        if ((*t)["batches"]) s.batches = size_list(*t, "batches", "sweep");
        if (auto v = get<std::size_t>(*t, "repeats", "sweep")) s.repeats = *v;
        if (auto v = get<double>(*t, "timeout_seconds", "sweep")) {
            s.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(*v * 1000.0));
        }
        if (auto v = get<std::string>(*t, "date_column", "sweep")) s.date_column = *v;
        if (auto v = get<std::string>(*t, "new_column", "sweep")) s.new_column = *v;
        if (auto v = get<std::string>(*t, "requirement", "sweep")) s.requirement = *v;
    }
    cfg.validate();
    return cfg;
}

AppConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open config '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path.parent_path());
}

std::shared_ptr<ChatBackend> make_backend(const BackendSection& section) {
    if (section.kind == "mock") return std::make_shared<MockBackend>(load_mock_script_file(section.mock_script.string()));
    if (section.kind == "openai") return std::make_shared<OpenAiBackend>();
    if (section.kind == "none") return std::make_shared<NoBackend>();
    fail(ErrorKind::Usage, "unknown backend kind '" + section.kind + "'");
}

PromptTemplates load_templates(const AppConfig& cfg) {
    return cfg.templates_dir.empty() ? PromptTemplates::builtin() : PromptTemplates::load(cfg.templates_dir);
}

}  // namespace lro
