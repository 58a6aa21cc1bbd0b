#pragma once

namespace dsr {

/// Parses argv and dispatches to a subcommand (gen-synth, train, distill,
/// infer, verify, psd, stations). Returns the process exit code:
/// 0 success, 1 usage/configuration error, 2 runtime error.
int run_cli(int argc, const char* const* argv);

}  // namespace dsr
