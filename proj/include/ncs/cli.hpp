#pragma once

// Command-line front end: design, simulate, compare, plot.

#include <string>

namespace ncs {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitInputError = 1,
  kExitInfeasible = 2,
  kExitMonitorFailure = 3,
};

/// Parses a duration such as "31.4159", "10pi" or "10π". Throws
/// InvalidInputError.
double parse_duration(const std::string& text);

int run_cli(int argc, char** argv);

}  // namespace ncs
