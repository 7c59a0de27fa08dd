#pragma once

#include <iosfwd>

namespace mfscm::cli {

/// Exit status: 0 success, 1 numerical failure, 2 configuration or validation error.
int run(int argc, char** argv);

/// Same as run() but with explicit streams (summary to `out`, errors to `err`).
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace mfscm::cli
