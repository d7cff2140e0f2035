#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace red::cli {

// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kDataError = 3,
  kNumericError = 4,
  kIntegrityError = 5,
};

/// Entry point shared by the `red` binary and the tests. args[0] is the
/// program name. Subcommands: train, eval, sample, detect, grid, gradcheck.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace red::cli
