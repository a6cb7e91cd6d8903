#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace edif::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kIo = 3, kFormat = 4, kNumeric = 5 };

/// Runs one command. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace edif::cli
