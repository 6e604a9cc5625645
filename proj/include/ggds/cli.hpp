#pragma once

#include <iosfwd>

namespace ggds {

/// Exit codes of the command-line driver.
enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitUsage = 2 };

/// Runs one `ggds` subcommand: layout, init, optimize, render, compose, export or bench.
int cli_main(int argc, const char *const *argv, std::ostream &out, std::ostream &err);
int cli_main(int argc, const char *const *argv);

} // namespace ggds
