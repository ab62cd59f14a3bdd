#pragma once

#include <exception>
#include <ostream>

namespace precodec::cli {

// Process exit codes. Stable; documented in the README.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,      // anything not listed below, and grad-check failures
  kConfigError = 2,  // bad flags, bad config file, malformed CSV
  kIoError = 3,      // unreadable/unwritable files, bad Y4M
  kModelError = 4,   // missing or incompatible checkpoint
  kEvalError = 5,    // too few RD points, curves without overlap
  kCodecError = 6,   // encoder/decoder process failure or contract violation
};

int exit_code_for(const std::exception& e);

// Entry point of the `precodec` tool.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace precodec::cli
