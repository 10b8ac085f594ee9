#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hirec {

/// Exit codes shared by every subcommand.
enum ExitCode : int { exit_ok = 0, exit_internal = 1, exit_input = 2, exit_backend = 3, exit_empty = 4 };

/// Entry point of the `hirec` command. `args` includes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hirec
