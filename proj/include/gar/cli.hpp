#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gar {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitMissingFile = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitNumeric = 4;

// Runs one `gar` invocation. args excludes the program name. Errors are
// reported on `err` as one JSON line: {"error": kind, "exit_code": n,
// "message": text}.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace gar
