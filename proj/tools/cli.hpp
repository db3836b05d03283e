#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace llie::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kData = 2,
  kNumeric = 3,
};

// Runs one `llie <subcommand> ...` invocation. args excludes argv[0].
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace llie::cli
