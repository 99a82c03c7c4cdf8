#pragma once

namespace geodistill::harness {

// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,    // anything not classified below
  kExitUsage = 2,      // bad flags or flag values
  kExitIo = 3,         // missing or unwritable files
  kExitInvalid = 4,    // malformed inputs or incompatible artifacts
  kExitTraining = 5,   // divergence
  kExitNumeric = 6,
  kExitGeneration = 7,
};

// Entry point of the geodistill tool. Prints a one-line diagnostic on failure.
int run_cli(int argc, const char* const* argv);

}  // namespace geodistill::harness
