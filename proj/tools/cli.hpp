#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mema::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitNotConverged = 4;

/// Runs one command line (without the program name) and returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mema::cli
