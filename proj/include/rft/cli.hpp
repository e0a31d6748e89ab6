#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rft::cli {

/// Runs one subcommand; `args` excludes the program name.
/// Returns 0 on success, 1 on usage or configuration errors, 2 on runtime errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args);

}  // namespace rft::cli
