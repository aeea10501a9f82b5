#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace coplanner::cli {

/// Runs one command line (without the program name). Returns the process exit
/// code: 0 on success, 1 on runtime failure, 2 on usage or configuration
/// errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace coplanner::cli
