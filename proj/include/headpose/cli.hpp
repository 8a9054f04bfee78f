#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace headpose::cli {

/// Runs the `headpose` command line (args excludes the program name) and
/// returns its exit code: 0 success, 2 usage, 3 data, 4 numeric failure,
/// 5 checkpoint mismatch.
///
/// Option values resolve as: command-line flag, then `--config FILE`
/// (key=value lines), then HEADPOSE_SEED for --seed, then built-in defaults.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace headpose::cli
