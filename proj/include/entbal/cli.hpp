#pragma once

#include <iosfwd>

namespace entbal {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;     // numerical failure other than infeasibility
inline constexpr int kExitInput = 2;       // I/O, parse or invalid input
inline constexpr int kExitInfeasible = 3;  // InfeasibleTarget with fallback none

// Subcommands: estimate | bootstrap | simulate | oracle.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace entbal
