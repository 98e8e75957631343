#pragma once

#include <string>
#include <vector>

namespace pollsim::cli {

// Runs one command line (without the program name). Exit codes: 0 success,
// 2 usage error, 3 input or validation error, 4 numeric failure.
int dispatch(const std::vector<std::string>& args);

}  // namespace pollsim::cli
