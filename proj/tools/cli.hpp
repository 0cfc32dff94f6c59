#pragma once

#include <iosfwd>

namespace postapprox::cli {

/// Runs one command line. Returns 0 on success, 1 on runtime errors and 2 on
/// usage errors; messages go to `err`, results to `out` or the --output file.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace postapprox::cli
