#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sieve::cli {

enum ExitCode : int {
  kOk = 0,
  kInternalError = 1,
  kConfigError = 2,
  kPartialFailure = 3,
  kEndpointFailure = 4,
};

/// Entry point shared by the executable and the tests; `args` excludes argv[0].
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Asks a running `review-serve` to shut down (also wired to SIGINT/SIGTERM).
void request_shutdown() noexcept;

}  // namespace sieve::cli
