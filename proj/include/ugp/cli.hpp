#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ugp::cli {

/// Runs one subcommand. `args` excludes the program name. Returns 0 on
/// success, 1 when the operation fails and 2 on a usage error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ugp::cli
