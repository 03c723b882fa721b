#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace flowsentry::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitRemote = 4;
inline constexpr int kExitInternal = 1;  // a bug, not a user error

/// Runs one command line; `args` excludes the program name. Returns the
/// process exit code.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace flowsentry::cli
