#pragma once

#include <ostream>

namespace cmasge {

/// Runs one subcommand. Returns 0 on success, 1 for usage and validation
/// errors, 2 for runtime failures.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cmasge
