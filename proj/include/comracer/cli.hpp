#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace comracer {

/// Runs the command line tool on `args` (without the program name). Returns
/// the process exit code: 0 ok, 1 bad input or configuration, 2 internal error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace comracer
