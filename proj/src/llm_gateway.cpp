#include "lro/llm_gateway.hpp"

#include "lro/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

namespace lro {

void BackendConfig::validate() const {
    if (parallelism < 1) fail(ErrorKind::Usage, "parallelism must be at least 1");
    if (timeout.count() <= 0) fail(ErrorKind::Usage, "timeout must be positive");
    if (temperature < 0.0) fail(ErrorKind::Usage, "temperature must be non-negative");
    if (max_context_tokens == 0) fail(ErrorKind::Usage, "max context length must be positive");
    if (transport_retries < 0 || malformed_retries < 0) fail(ErrorKind::Usage, "retry counts must be non-negative");
}

std::string RequestTag::to_string() const {
    std::string out = op + "/" + variant;
    if (!element_ids.empty()) {
        out += "[";
        for (std::size_t i = 0; i < element_ids.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(element_ids[i]);
        }
        out += "]";
    }
    if (!right_ids.empty()) {
        out += "x[";
        for (std::size_t i = 0; i < right_ids.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(right_ids[i]);
        }
        out += "]";
    }
    return out;
}

void UsageLedger::append(const UsageLedger& other) {
    records_.insert(records_.end(), other.records_.begin(), other.records_.end());
}

std::int64_t UsageLedger::input_tokens() const {
    std::int64_t total = 0;
    for (const auto& r : records_) total += r.input_tokens;
    return total;
}

std::int64_t UsageLedger::output_tokens() const {
    std::int64_t total = 0;
    for (const auto& r : records_) total += r.output_tokens;
    return total;
}

UsageLedger UsageLedger::slice(std::size_t from) const {
    UsageLedger out;
    for (std::size_t i = from; i < records_.size(); ++i) out.append(records_[i]);
    return out;
}

CostSummary cost(const UsageLedger& ledger, const PriceTable& prices) {
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> tokens;
    for (const auto& r : ledger.records()) {
        auto& t = tokens[r.model];
        t.first += r.input_tokens;
        t.second += r.output_tokens;
    }
    CostSummary summary;
    for (const auto& [model, t] : tokens) {
        auto it = prices.find(model);
        if (it == prices.end()) fail(ErrorKind::Usage, "no price configured for model '" + model + "'");
        const double dollars = (static_cast<double>(t.first) * it->second.input_per_million +
                                static_cast<double>(t.second) * it->second.output_per_million) /
                               1'000'000.0;
        summary.per_model[model] = dollars;
        summary.total += dollars;
    }
    return summary;
}

std::int64_t estimate_tokens(std::string_view text) {
    return static_cast<std::int64_t>((text.size() + 3) / 4);
}

std::int64_t estimate_request_tokens(const ChatRequest& req) {
    return estimate_tokens(req.system) + estimate_tokens(req.user);
}

// ---------------------------------------------------------------------------
// Mock backend

MockScript& MockScript::respond(std::string text) {
    queue.push_back(MockReply{std::move(text)});
    return *this;
}

MockScript& MockScript::rule(Rule r) {
    rules.push_back(std::move(r));
    return *this;
}

namespace {

MockReply reply_from_json(const nlohmann::json& v) {
    if (v.is_string()) return MockReply{v.get<std::string>()};
    if (!v.is_object()) fail(ErrorKind::Parse, "mock reply must be a string or an object");
    MockReply reply;
    if (auto it = v.find("text"); it != v.end()) {
        reply.text = it->is_string() ? it->get<std::string>() : it->dump();
    } else if (auto js = v.find("json"); js != v.end()) {
        reply.text = js->dump();
    }
    reply.delay = std::chrono::milliseconds(v.value("delay_ms", 0));
    reply.fail_attempts = v.value("fail_attempts", 0);
    return reply;
}

}  // namespace

MockScript load_mock_script(std::string_view json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::Parse, std::string("malformed mock script: ") + e.what());
    }
    if (!doc.is_object()) fail(ErrorKind::Parse, "mock script must be a JSON object");
    MockScript script;
    if (auto it = doc.find("responses"); it != doc.end()) {
        for (const auto& r : *it) script.queue.push_back(reply_from_json(r));
    }
    if (auto it = doc.find("rules"); it != doc.end()) {
        for (const auto& r : *it) {
            if (!r.contains("respond")) fail(ErrorKind::Parse, "mock rule lacks 'respond'");
            std::optional<std::string> contains;
            std::optional<std::regex> pattern;
            std::optional<std::string> op;
            std::optional<std::string> variant;
            std::optional<std::vector<std::size_t>> elements;
            std::optional<std::vector<std::size_t>> right_elements;
            if (r.contains("contains")) contains = r.at("contains").get<std::string>();
            if (r.contains("regex")) {
                try {
                    pattern = std::regex(r.at("regex").get<std::string>(), std::regex::ECMAScript);
                } catch (const std::regex_error& e) {
                    fail(ErrorKind::Parse, std::string("bad regex in mock rule: ") + e.what());
                }
            }
            if (r.contains("op")) op = r.at("op").get<std::string>();
            if (r.contains("variant")) variant = r.at("variant").get<std::string>();
            if (r.contains("elements")) elements = r.at("elements").get<std::vector<std::size_t>>();
            if (r.contains("right_elements")) right_elements = r.at("right_elements").get<std::vector<std::size_t>>();
            MockReply reply = reply_from_json(r.at("respond"));
            script.rules.push_back([=](const ChatRequest& req) -> std::optional<MockReply> {
                if (contains && req.user.find(*contains) == std::string::npos) return std::nullopt;
                if (pattern && !std::regex_search(req.user, *pattern)) return std::nullopt;
                if (op && req.tag.op != *op) return std::nullopt;
                if (variant && req.tag.variant != *variant) return std::nullopt;
                if (elements && req.tag.element_ids != *elements) return std::nullopt;
                if (right_elements && req.tag.right_ids != *right_elements) return std::nullopt;
                return reply;
            });
        }
    }
    if (auto it = doc.find("default"); it != doc.end()) script.fallback = reply_from_json(*it);
    return script;
}

MockScript load_mock_script_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open mock script '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return load_mock_script(buf.str());
}

MockBackend::MockBackend(MockScript script) : script_(std::move(script)) {}

std::vector<ChatRequest> MockBackend::seen_requests() const {
    std::lock_guard lock(seen_mu_);
    return seen_;
}

ChatResponse MockBackend::send(const BackendConfig&, const ChatRequest& req, const CallInfo& info,
                               const CancelToken& cancel) {
    const auto start = Clock::now();
    const auto now_in_flight = in_flight_.fetch_add(1) + 1;
    std::size_t prev = max_in_flight_.load();
    while (prev < now_in_flight && !max_in_flight_.compare_exchange_weak(prev, now_in_flight)) {
    }
    struct Leave {
        std::atomic<std::size_t>& c;
        ~Leave() { c.fetch_sub(1); }
    } leave{in_flight_};
    ++sends_;
    {
        std::lock_guard lock(seen_mu_);
        seen_.push_back(req);
    }

    std::optional<MockReply> reply;
    for (const auto& r : script_.rules) {
        if ((reply = r(req))) break;
    }
    if (!reply && info.ordinal < script_.queue.size()) reply = script_.queue[info.ordinal];
    if (!reply) reply = script_.fallback;
    if (!reply) {
        fail(ErrorKind::Backend, "mock script exhausted at call " + std::to_string(info.ordinal) + " (" +
                                     req.tag.to_string() + ")");
    }

    auto remaining = reply->delay;
    while (remaining.count() > 0) {
        if (cancel.cancelled()) fail(ErrorKind::Timeout, "request cancelled");
        const auto step = std::min(remaining, std::chrono::milliseconds(2));
        std::this_thread::sleep_for(step);
        remaining -= step;
    }
    if (cancel.expired()) fail(ErrorKind::Timeout, "request exceeded the query deadline");
    if (info.attempt < reply->fail_attempts) {
        fail(ErrorKind::Backend, "scripted transport failure at call " + std::to_string(info.ordinal));
    }

    ChatResponse resp;
    resp.text = reply->text;
    resp.input_tokens = estimate_request_tokens(req);
    resp.output_tokens = estimate_tokens(resp.text);
    resp.latency = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start);
    return resp;
}

// ---------------------------------------------------------------------------
// Gateway

struct Gateway::Shared {
    explicit Shared(std::size_t slots) : in_flight(static_cast<std::ptrdiff_t>(slots)) {}
    std::counting_semaphore<> in_flight;
};

Gateway::Gateway(BackendConfig cfg, std::shared_ptr<ChatBackend> backend)
    : Gateway(cfg, std::move(backend), std::make_shared<Shared>(cfg.parallelism)) {}

Gateway::Gateway(BackendConfig cfg, std::shared_ptr<ChatBackend> backend, std::shared_ptr<Shared> shared)
    : cfg_(std::move(cfg)), backend_(std::move(backend)), shared_(std::move(shared)) {
    cfg_.validate();
    if (!backend_) fail(ErrorKind::Usage, "gateway needs a backend");
}

Gateway Gateway::fork() const { return Gateway(cfg_, backend_, shared_); }

Gateway Gateway::fork(std::shared_ptr<ChatBackend> backend) const {
    return Gateway(cfg_, std::move(backend), shared_);
}

void Gateway::check_context(const ChatRequest& req) const {
    if (req.user.empty()) fail(ErrorKind::Usage, "chat request has empty user text");
    const auto tokens = estimate_request_tokens(req);
    if (tokens > static_cast<std::int64_t>(cfg_.max_context_tokens)) {
        fail(ErrorKind::ContextOverflow, "prompt needs ~" + std::to_string(tokens) + " tokens, context budget is " +
                                             std::to_string(cfg_.max_context_tokens));
    }
}

void Gateway::begin_query() {
    std::lock_guard lock(*mu_);
    deadline_ = Clock::now() + cfg_.timeout;
}

void Gateway::begin_query(std::chrono::milliseconds timeout) {
    if (timeout.count() <= 0) fail(ErrorKind::Usage, "query timeout must be positive");
    std::lock_guard lock(*mu_);
    deadline_ = Clock::now() + timeout;
}

void Gateway::end_query() {
    std::lock_guard lock(*mu_);
    deadline_.reset();
}

std::optional<Clock::time_point> Gateway::deadline() const {
    std::lock_guard lock(*mu_);
    return deadline_;
}

Clock::time_point Gateway::effective_deadline() const {
    if (auto d = deadline()) return *d;
    return Clock::now() + cfg_.timeout;
}

UsageLedger Gateway::ledger() const {
    std::lock_guard lock(*mu_);
    return ledger_;
}

std::size_t Gateway::ledger_size() const {
    std::lock_guard lock(*mu_);
    return ledger_.calls();
}

void Gateway::record(const ChatRequest& req, const ChatResponse& resp) {
    std::lock_guard lock(*mu_);
    ledger_.append(UsageRecord{req.tag.to_string(), cfg_.model, resp.input_tokens, resp.output_tokens});
}

ChatResponse Gateway::send_with_retry(const ChatRequest& req, std::uint64_t ordinal, const CancelToken& cancel) {
    for (int attempt = 0;; ++attempt) {
        if (cancel.expired()) fail(ErrorKind::Timeout, "query timed out");
        if (!shared_->in_flight.try_acquire_until(cancel.deadline())) fail(ErrorKind::Timeout, "query timed out");
        struct Release {
            std::counting_semaphore<>& s;
            ~Release() { s.release(); }
        } release{shared_->in_flight};
        try {
            return backend_->send(cfg_, req, CallInfo{ordinal, attempt}, cancel);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Backend || attempt >= cfg_.transport_retries) throw;
        }
    }
}

ChatResponse Gateway::complete(const ChatRequest& req) {
    check_context(req);
    CancelToken cancel(effective_deadline());
    const auto ordinal = backend_->reserve(1);
    auto resp = send_with_retry(req, ordinal, cancel);
    record(req, resp);
    return resp;
}

std::vector<ChatResponse> Gateway::complete_many(const std::vector<ChatRequest>& reqs) {
    if (reqs.empty()) return {};
    for (const auto& r : reqs) check_context(r);

    const std::size_t n = reqs.size();
    CancelToken cancel(effective_deadline());
    const auto base = backend_->reserve(n);
    std::vector<std::optional<ChatResponse>> results(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};

    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n || cancel.cancelled()) return;
            try {
                results[i] = send_with_retry(reqs[i], base + i, cancel);
            } catch (...) {
                errors[i] = std::current_exception();
                cancel.cancel();
            }
        }
    };

    const std::size_t workers = std::min(cfg_.parallelism, n);
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    }

    // Completed calls are billed even when the batch fails.
    for (std::size_t i = 0; i < n; ++i) {
        if (results[i]) record(reqs[i], *results[i]);
    }

    if (cancel.expired()) {
        const bool all_done = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.has_value(); });
        if (!all_done) fail(ErrorKind::Timeout, "query exceeded its timeout of " +
                                                    std::to_string(cfg_.timeout.count()) + " ms");
    }
    // Lowest-index failure that is not a consequence of cancellation.
    std::exception_ptr first;
    for (std::size_t i = 0; i < n; ++i) {
        if (!errors[i]) continue;
        try {
            std::rethrow_exception(errors[i]);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::Timeout && first) continue;
            if (e.kind() != ErrorKind::Timeout) {
                first = errors[i];
                break;
            }
            if (!first) first = errors[i];
        } catch (...) {
            first = errors[i];
            break;
        }
    }
    if (first) std::rethrow_exception(first);

    std::vector<ChatResponse> out;
    out.reserve(n);
    for (auto& r : results) {
        if (!r) fail(ErrorKind::Timeout, "query exceeded its timeout");
        out.push_back(std::move(*r));
    }
    return out;
}

}  // namespace lro
