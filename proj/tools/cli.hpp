#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ddsi::cli {

/// Runs one `ddsi` invocation; `args` excludes the program name.
/// Returns 0 on success, 1 on runtime failure, 2 on usage or config errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ddsi::cli
