#pragma once

#include <string>
#include <vector>

namespace engage::cli {

/// Dispatches one CLI invocation (argv without the program name).
/// Returns 0 on success, 1 on usage errors, 2 on data/validation errors,
/// 3 on numeric failures. Error text goes to stderr.
int run(const std::vector<std::string>& args);

}  // namespace engage::cli
