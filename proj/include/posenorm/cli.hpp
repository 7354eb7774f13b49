#pragma once

#include <iosfwd>

namespace posenorm {

/// `posenorm <synth-gen|train|eval|analyze|sweep> [options]`. Returns 0 when
/// every requested artifact was written. Failures print one JSON line
/// `{"error": ..., "command": ..., "kind": ...}` to `err` and return nonzero
/// (2 for usage errors, 1 otherwise).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace posenorm
