#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace resmtl::cli {

/// Stable process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 1,
  kExitNumeric = 2,
  kExitGradcheck = 3,
};

/// Runs `resmtl <subcommand> [options]`. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace resmtl::cli
