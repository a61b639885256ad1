#pragma once

#include <string>
#include <vector>

namespace resinit {

// Runs the command-line tool. args excludes the program name.
// Exit codes: 0 success, 1 usage/config error, 2 verification failure.
int run_cli(const std::vector<std::string>& args);

} // namespace resinit
