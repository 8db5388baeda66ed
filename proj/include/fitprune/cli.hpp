#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fitprune::cli {

/// Stable process exit codes.
enum ExitCode : int {
    exit_ok = 0,
    exit_internal = 1,
    exit_validation = 2,
    exit_io = 3,
    exit_infeasible = 4,
};

/// Entry point shared by the executable and in-process callers.
/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace fitprune::cli
