#pragma once

// Command-line front end: clab <gen|train|sample|eval|sweep> [options].
// Exit codes: 0 success, 1 I/O or other runtime failure, 2 invalid config or
// usage, 3 numeric failure (non-finite loss or sampler state).

#include <string>
#include <vector>

namespace clab::cli {

// args excludes the program name.
int run(const std::vector<std::string> &args);

}  // namespace clab::cli
