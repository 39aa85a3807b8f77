#pragma once

#include <ostream>

namespace wurstkit::cli {

// Parses argv and runs one subcommand. Returns the process exit status:
// 0 success, 1 failed precondition or runtime error, 2 usage error.
// Artifacts go to out, progress and the one-line error record to err.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace wurstkit::cli
