#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hotcalib::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitNumerical = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `hotcalib` tool. `args` excludes the program name.
/// Results and summaries go to `out`; progress and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace hotcalib::cli
