#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dcnt::cli {

/// Runs one subcommand. args excludes the program name. Returns the process
/// exit code: 0 success, 1 runtime failure, 2 usage error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dcnt::cli
