#pragma once

#include "lro/error.hpp"
#include "lro/llm_gateway.hpp"
#include "lro/prompt_kit.hpp"
#include "lro/relation.hpp"

#include <filesystem>
#include <memory>
#include <sstream>
#include <string>

namespace lro::test {

inline Relation restaurants() {
    return Relation("Restaurants", {"Name", "Location", "Cuisine", "Description"},
                    {{"Alley Wok", "San Jose, CA", "Chinese", "Cozy spot with red lanterns"},
                     {"Golden Lotus", "Oakland, CA", "Vietnamese", "Bright with communal tables"},
                     {"Seoul Garden", "Los Angeles, CA", "Korean", "Smoky tabletop grills"}});
}

inline Relation csv(const std::string& text, const std::string& name = "t") {
    std::istringstream in(text);
    return read_csv(in, name);
}

struct MockGateway {
    std::shared_ptr<MockBackend> backend;
    Gateway gateway;

    explicit MockGateway(MockScript script, BackendConfig cfg = {})
        : backend(std::make_shared<MockBackend>(std::move(script))), gateway(cfg, backend) {}
};

inline const PromptTemplates& templates() {
    static const PromptTemplates t = PromptTemplates::builtin();
    return t;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("lro_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

template <class F>
ErrorKind error_kind(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    throw std::logic_error("expected an lro::Error");
}

}  // namespace lro::test
