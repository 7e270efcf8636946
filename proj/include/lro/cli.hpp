#pragma once

#include "lro/error.hpp"

#include <iosfwd>

namespace lro {

/// Process exit codes.
enum ExitCode : int {
    kExitOk = 0,
    kExitDomain = 1,   // domain, parse, I/O and model-output errors
    kExitUsage = 2,    // bad flags or configuration
    kExitBackend = 3,  // transport failures and timeouts
};

int exit_code_for(ErrorKind kind) noexcept;

/// Entry point of the `lro` tool. Subcommands: op, plan, bench, sweep, report.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lro
