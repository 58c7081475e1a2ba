#pragma once

namespace ssd {

/// The `ssd` command line: run, ablate, dump and verify subcommands. Every
/// config key is also a `--key value` flag; flags override `--config` files.
/// Returns a process exit code (see ExitCode).
int run_cli(int argc, char** argv);

}  // namespace ssd
