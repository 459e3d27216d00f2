#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fixseg {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitData = 3,
  kExitInfeasibleSplit = 4,
};

/// Runs one command line. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fixseg
