#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace mistseg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

/// Parses `args` (without the program name) and runs the selected command.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main_entry(int argc, char** argv);

}  // namespace mistseg::cli
