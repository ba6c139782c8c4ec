#pragma once

#include <string>
#include <vector>

namespace metoken::cli {

// Entry point shared by the binary and the tests. Returns the process exit
// code: 0 on success, 1 for usage/config errors, 2-9 per error class.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace metoken::cli
