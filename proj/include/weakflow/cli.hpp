#pragma once

// Command-line driver. Every experiment is a subcommand; parameters resolve
// with precedence command line > config file > defaults, the resolved set is
// echoed into the output directory, and a one-line JSON summary goes to
// stdout. Exit codes: 0 success, 2 validation error, 3 numerical-contract
// violation.

#include <string>
#include <vector>

namespace weakflow::cli {

int run(std::vector<std::string> args);  // args excludes argv[0]

}  // namespace weakflow::cli
