#pragma once

#include <string>
#include <vector>

namespace trajrec {

// Full command-line entry point (argv[0] is the program name). Exit
// codes: 0 ok, 2 validation/usage error, 3 data or parse error,
// 4 training divergence, 1 anything else.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace trajrec
