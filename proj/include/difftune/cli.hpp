#pragma once

namespace difftune {

// Entry point behind the difftune binary; exposed so tests can drive the
// exact command paths in-process.
int cli_dispatch(int argc, const char* const* argv);

}  // namespace difftune
