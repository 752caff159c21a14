#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tspnet {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // bad arguments, config, files or a failed check
inline constexpr int kExitDiverged = 2;

/// Runs one command. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tspnet
