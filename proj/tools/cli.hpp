#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace malfuse::cli {

/// Every subcommand, in help order.
const std::vector<std::string>& subcommands();

/// Parses `args` (without the program name), runs the subcommand and
/// returns the process exit status: 0 success, 2 configuration error,
/// 3 data error, 4 stage failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace malfuse::cli
