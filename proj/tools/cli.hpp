#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace edgecl::cli {

/// Exit codes: 0 success, 1 user error (bad flags, bad input files), 2 internal error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitInternal = 2;

/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

/// --help output for a subcommand ("" for the top level).
std::string help_text(const std::string& subcommand);

}  // namespace edgecl::cli
