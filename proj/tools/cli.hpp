#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace needle::cli {

/// Runs the `needle` command line. `args` excludes the program name.
/// Returns the process exit status; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace needle::cli
