#pragma once

namespace metadepth {

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;

/// Full command-line entry point (gen-data, train, evaluate, compare,
/// export-pointcloud). Returns the process exit code.
int cli_main(int argc, char** argv);

}  // namespace metadepth
