// Command-line entry point.  `run` takes the argument list (without the
// program name) and returns the process exit code: 0 when all outputs were
// written, 1 with a one-line `error: ...` on stderr otherwise.  Subcommands:
// generate, train, infer, evaluate, observers, plot.  The PETREL_SEED
// environment variable overrides the configured seed; `--threads 1` (the
// default) guarantees bitwise-reproducible outputs.
#pragma once

#include <string>
#include <vector>

namespace petrel::cli {

int run(const std::vector<std::string>& args);

} // namespace petrel::cli
