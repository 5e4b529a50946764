#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace magcal {

/// Exit codes of the command-line front end.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitUsage = 2;

/// Runs `magcal <subcommand> [flags]`; `args` excludes the program name.
/// Subcommands: simulate, calibrate, apply.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace magcal
