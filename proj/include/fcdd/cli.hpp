#pragma once

namespace fcdd {

/// Entry point for the command-line tool; returns the process exit code.
/// Subcommands: synth, train, eval, inspect, gradcheck, sweep.
int cli_main(int argc, const char* const* argv);

}  // namespace fcdd
