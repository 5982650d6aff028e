#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace polyrecover {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitIo = 2 };

// Subcommands: gen, degrade, verify, eval, serve, export-human. Every
// subcommand accepts --seed, --config and --out. Returns 0 on success, 1 on
// validation failure or bad usage, 2 on I/O failure.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace polyrecover
