#pragma once

namespace advdef::cli {

// Exit codes of the advdef binary.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMissingPhase = 3;
inline constexpr int kExitRuntime = 4;

// Parses argv and runs the chosen subcommand; never throws.
int run_cli(int argc, char** argv);

}  // namespace advdef::cli
