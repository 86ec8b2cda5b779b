#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ppcn::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kUsage = 2, kIo = 3, kNumerical = 4 };

/// Runs one command line (args[0] is the program name). Normal output goes
/// to `out`, diagnostics to `err`; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ppcn::cli
