#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nadapt {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitDivergence = 2;
inline constexpr int kExitConfig = 3;

/// Runs `nadapt <verb> [options]`; `args` excludes the program name. Returns
/// the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nadapt
