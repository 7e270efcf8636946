#include "lro/error.hpp"
#include "lro/llm_gateway.hpp"

#include <httplib.h>
#include "json.hpp"

#include <cstdlib>

namespace lro {

namespace {

struct Endpoint {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

Endpoint split_endpoint(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) fail(ErrorKind::Usage, "endpoint URL lacks a scheme: '" + url + "'");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

std::string OpenAiBackend::request_body(const BackendConfig& cfg, const ChatRequest& req) {
    nlohmann::ordered_json body;
    body["model"] = cfg.model;
    body["messages"] = nlohmann::ordered_json::array();
    if (!req.system.empty()) body["messages"].push_back({{"role", "system"}, {"content", req.system}});
    body["messages"].push_back({{"role", "user"}, {"content", req.user}});
    body["temperature"] = cfg.temperature;
    return body.dump();
}

ChatResponse OpenAiBackend::parse_response_body(std::string_view body, const ChatRequest& req) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::Backend, std::string("endpoint returned invalid JSON: ") + e.what());
    }
    ChatResponse resp;
    try {
        const auto& content = doc.at("choices").at(0).at("message").at("content");
        resp.text = content.is_string() ? content.get<std::string>() : std::string();
    } catch (const nlohmann::json::exception&) {
        fail(ErrorKind::Backend, "endpoint response lacks choices[0].message.content");
    }
    const auto usage = doc.find("usage");
    if (usage != doc.end() && usage->is_object() && usage->contains("prompt_tokens")) {
        resp.input_tokens = usage->value("prompt_tokens", std::int64_t{0});
        resp.output_tokens = usage->value("completion_tokens", std::int64_t{0});
    } else {
        resp.input_tokens = estimate_request_tokens(req);
        resp.output_tokens = estimate_tokens(resp.text);
    }
    return resp;
}

ChatResponse OpenAiBackend::send(const BackendConfig& cfg, const ChatRequest& req, const CallInfo&,
                                 const CancelToken& cancel) {
    const auto start = Clock::now();
    const auto [origin, path] = split_endpoint(cfg.endpoint);
    httplib::Client client(origin);

    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(cancel.deadline() - start);
    if (remaining.count() <= 0) fail(ErrorKind::Timeout, "query deadline passed before the request was sent");
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(remaining);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(remaining - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    httplib::Headers headers;
    if (const char* key = std::getenv(cfg.api_key_env.c_str()); key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    auto result = client.Post(path, headers, request_body(cfg, req), "application/json");
    if (cancel.expired()) fail(ErrorKind::Timeout, "request exceeded the query deadline");
    if (!result) fail(ErrorKind::Backend, "transport error: " + httplib::to_string(result.error()));
    if (result->status != 200) {
        fail(ErrorKind::Backend, "HTTP " + std::to_string(result->status) + ": " + result->body.substr(0, 200));
    }
    auto resp = parse_response_body(result->body, req);
    resp.latency = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start);
    return resp;
}

}  // namespace lro
