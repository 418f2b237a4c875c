#pragma once

#include <iosfwd>

#include "lesion/error.hpp"

namespace lesion {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // verification or training failure
inline constexpr int kExitUsage = 2;    // bad arguments, unreadable or malformed input, IO

int exit_code(ErrorKind kind);

/// Entry point behind the `lesion` executable. Subcommands: synth, prepare,
/// train, eval, gradcheck. Every option can also come from a JSON object given
/// with --config (keys are the long flag names); flags override the file.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lesion
