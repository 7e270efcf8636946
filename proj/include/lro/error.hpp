#pragma once

#include <stdexcept>
#include <string>

namespace lro {

/// Broad failure classes. The CLI maps these onto its exit codes.
enum class ErrorKind {
    Usage,            // invalid operator/granularity/variant combination, bad flags
    Domain,           // precondition violated on the data (ragged rows, unknown column, ...)
    Io,               // file system
    Parse,            // plan text, CSV/JSON input
    MalformedOutput,  // LLM completion did not match the expected shape
    ContextOverflow,  // prompt does not fit into the context budget
    Timeout,          // per-query deadline exceeded
    Backend,          // transport / HTTP failure after retries
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace lro
