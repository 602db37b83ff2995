#pragma once

// Command surface of the dcem tool. Every command reads one experiment
// config (plus --set overrides) and writes its artifacts under the run
// directory next to a frozen copy of that config.

#include <iosfwd>
#include <string>
#include <vector>

namespace dcem {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitData = 3,
  kExitRuntime = 4,
};

/// Parses `args` (without the program name), runs the command and maps
/// errors to exit codes. Messages go to `out` / `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dcem
