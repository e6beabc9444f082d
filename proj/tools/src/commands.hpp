#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace scdsc::cli {

/// Exit statuses of the command-line tool.
enum ExitCode : int { kSuccess = 0, kRuntimeFailure = 1, kUsageError = 2 };

/// Runs one command line (args[0] is the program name) and returns its exit
/// status. Normal output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace scdsc::cli
