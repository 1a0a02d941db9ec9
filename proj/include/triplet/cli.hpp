#pragma once

#include <string>
#include <vector>

namespace triplet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Parses the arguments (without the program name), runs the subcommand and
/// returns the process exit code: 0 success, 1 runtime failure, 2 usage.
int dispatch(const std::vector<std::string>& args);
int dispatch(int argc, char** argv);

}  // namespace triplet::cli
