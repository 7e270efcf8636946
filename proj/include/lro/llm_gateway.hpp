#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

namespace lro {

using Clock = std::chrono::steady_clock;

/// Execution knobs. Defaults are the evaluation constants: temperature 0,
/// 20,480-token context, 10 requests in flight, 30 minutes per query.
struct BackendConfig {
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model = "mock";
    double temperature = 0.0;
    std::size_t max_context_tokens = 20480;
    std::size_t parallelism = 10;
    std::chrono::milliseconds timeout = std::chrono::minutes(30);
    int transport_retries = 1;
    int malformed_retries = 1;
    std::string api_key_env = "OPENAI_API_KEY";

    /// Throws Error(Usage) when an invariant is violated.
    void validate() const;
};

struct RequestTag {
    std::string op;       // e.g. "select"
    std::string variant;  // e.g. "ONE", "BATCH(50)"
    std::vector<std::size_t> element_ids;
    std::vector<std::size_t> right_ids;  // match: ids on the right-hand side

    std::string to_string() const;
};

struct ChatRequest {
    std::string system;
    std::string user;
    RequestTag tag;
};

struct ChatResponse {
    std::string text;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    std::chrono::milliseconds latency{0};
};

struct UsageRecord {
    std::string tag;
    std::string model;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;

    friend bool operator==(const UsageRecord&, const UsageRecord&) = default;
};

/// Per-call token accounting. Totals are always recomputed from the records.
class UsageLedger {
public:
    void append(UsageRecord record) { records_.push_back(std::move(record)); }
    void append(const UsageLedger& other);

    const std::vector<UsageRecord>& records() const noexcept { return records_; }
    std::size_t calls() const noexcept { return records_.size(); }
    std::int64_t input_tokens() const;
    std::int64_t output_tokens() const;
    /// Records [from, end) as a new ledger.
    UsageLedger slice(std::size_t from) const;

    friend bool operator==(const UsageLedger&, const UsageLedger&) = default;

private:
    std::vector<UsageRecord> records_;
};

struct Price {
    double input_per_million = 0.0;
    double output_per_million = 0.0;
};

using PriceTable = std::map<std::string, Price, std::less<>>;

struct CostSummary {
    std::map<std::string, double> per_model;
    double total = 0.0;
};

/// Σ (in × in_price + out × out_price) / 1e6 per model. Throws Error(Usage)
/// when a model in the ledger has no price.
CostSummary cost(const UsageLedger& ledger, const PriceTable& prices);

/// ceil(chars / 4): the character-ratio token estimate used for budgeting and
/// by the mock backend.
std::int64_t estimate_tokens(std::string_view text);
std::int64_t estimate_request_tokens(const ChatRequest& req);

/// Cooperative cancellation shared by the requests of one fan-out.
class CancelToken {
public:
    explicit CancelToken(Clock::time_point deadline) : deadline_(deadline) {}
    void cancel() noexcept { cancelled_.store(true); }
    bool cancelled() const noexcept { return cancelled_.load() || Clock::now() >= deadline_; }
    bool expired() const noexcept { return Clock::now() >= deadline_; }
    Clock::time_point deadline() const noexcept { return deadline_; }

private:
    Clock::time_point deadline_;
    std::atomic<bool> cancelled_{false};
};

struct CallInfo {
    std::uint64_t ordinal = 0;  // position reserved in request order
    int attempt = 0;            // 0 for the first try
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    /// Reserves `n` consecutive ordinals before a fan-out so that scripted
    /// backends consume their queues in request order, not completion order.
    virtual std::uint64_t reserve(std::size_t n) {
        return next_.fetch_add(n);
    }
    /// Throws Error(Backend) for transport failures, Error(Timeout) on cancellation.
    virtual ChatResponse send(const BackendConfig& cfg, const ChatRequest& req, const CallInfo& info,
                              const CancelToken& cancel) = 0;

private:
    std::atomic<std::uint64_t> next_{0};
};

/// Scripted response for the mock backend.
struct MockReply {
    std::string text;
    std::chrono::milliseconds delay{0};
    /// The first `fail_attempts` attempts at this ordinal raise a transport error.
    int fail_attempts = 0;
};

/// Deterministic script: rules are tried in order, then the queue is read at
/// the call's ordinal. An exhausted script is a backend error.
struct MockScript {
    using Rule = std::function<std::optional<MockReply>(const ChatRequest&)>;
    std::vector<MockReply> queue;
    std::vector<Rule> rules;
    std::optional<MockReply> fallback;

    MockScript& respond(std::string text);
    MockScript& rule(Rule r);
};

/// Loads a mock script from JSON. See docs/formats.md for the schema.
MockScript load_mock_script(std::string_view json_text);
MockScript load_mock_script_file(const std::string& path);

class MockBackend : public ChatBackend {
public:
    explicit MockBackend(MockScript script);

    ChatResponse send(const BackendConfig& cfg, const ChatRequest& req, const CallInfo& info,
                      const CancelToken& cancel) override;

    std::size_t max_in_flight() const noexcept { return max_in_flight_.load(); }
    std::size_t total_sends() const noexcept { return sends_.load(); }
    std::vector<ChatRequest> seen_requests() const;

private:
    MockScript script_;
    std::atomic<std::size_t> in_flight_{0};
    std::atomic<std::size_t> max_in_flight_{0};
    std::atomic<std::size_t> sends_{0};
    mutable std::mutex seen_mu_;
    std::vector<ChatRequest> seen_;
};

/// OpenAI-compatible chat-completions client. The API key is read from the
/// environment variable named in BackendConfig::api_key_env.
class OpenAiBackend : public ChatBackend {
public:
    ChatResponse send(const BackendConfig& cfg, const ChatRequest& req, const CallInfo& info,
                      const CancelToken& cancel) override;

    /// Builds the JSON request body.
    static std::string request_body(const BackendConfig& cfg, const ChatRequest& req);
    /// Extracts completion text and usage; falls back to estimates when the
    /// usage block is absent.
    static ChatResponse parse_response_body(std::string_view body, const ChatRequest& req);
};

/// Thread-safe front door to a backend: context checks, bounded parallel
/// fan-out, per-query deadlines, transport retries and usage accounting.
///
/// Forks share the backend and the global in-flight cap but own their ledger
/// and deadline, so concurrent queries are accounted separately.
class Gateway {
public:
    Gateway(BackendConfig cfg, std::shared_ptr<ChatBackend> backend);

    const BackendConfig& config() const noexcept { return cfg_; }
    ChatBackend& backend() const noexcept { return *backend_; }

    ChatResponse complete(const ChatRequest& req);
    /// Results are aligned with `reqs`. Throws Error(Timeout) if the query
    /// deadline passes before every request completes.
    std::vector<ChatResponse> complete_many(const std::vector<ChatRequest>& reqs);

    /// Throws Error(ContextOverflow) when the request exceeds the context budget.
    void check_context(const ChatRequest& req) const;

    /// Starts the per-query clock; subsequent calls share one deadline.
    void begin_query();
    void begin_query(std::chrono::milliseconds timeout);
    void end_query();
    std::optional<Clock::time_point> deadline() const;

    UsageLedger ledger() const;
    std::size_t ledger_size() const;

    Gateway fork() const;
    Gateway fork(std::shared_ptr<ChatBackend> backend) const;

private:
    struct Shared;
    Gateway(BackendConfig cfg, std::shared_ptr<ChatBackend> backend, std::shared_ptr<Shared> shared);

    ChatResponse send_with_retry(const ChatRequest& req, std::uint64_t ordinal, const CancelToken& cancel);
    Clock::time_point effective_deadline() const;
    void record(const ChatRequest& req, const ChatResponse& resp);

    BackendConfig cfg_;
    std::shared_ptr<ChatBackend> backend_;
    std::shared_ptr<Shared> shared_;
    std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
    UsageLedger ledger_;
    std::optional<Clock::time_point> deadline_;
};

/// Sets the gateway's query deadline for the lifetime of the scope.
class QueryScope {
public:
    explicit QueryScope(Gateway& gw) : gw_(gw) { gw_.begin_query(); }
    QueryScope(Gateway& gw, std::chrono::milliseconds timeout) : gw_(gw) { gw_.begin_query(timeout); }
    ~QueryScope() { gw_.end_query(); }
    QueryScope(const QueryScope&) = delete;
    QueryScope& operator=(const QueryScope&) = delete;

private:
    Gateway& gw_;
};

}  // namespace lro
