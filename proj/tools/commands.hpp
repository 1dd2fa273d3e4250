#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace roma::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// Runs one command line (without the program name). Safe to call repeatedly
// in one process; all state is local to the call.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace roma::cli
