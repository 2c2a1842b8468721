#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace civic::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace civic::cli
