#pragma once

#include <string>
#include <vector>

namespace pipesched::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitDomain = 2;
inline constexpr int kExitVerify = 3;

// Runs one command line (argv[0] included) and returns the exit code.
int run(const std::vector<std::string>& args);

}  // namespace pipesched::cli
