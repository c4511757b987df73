#ifndef STRDAN_TOOLS_CLI_HPP_
#define STRDAN_TOOLS_CLI_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace strdan::cli {

enum ExitCode { kOk = 0, kRuntime = 1, kUsage = 2, kDiverged = 3 };

// args excludes the program name: {"gen", "--ids-real", "4", ...}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace strdan::cli

#endif  // STRDAN_TOOLS_CLI_HPP_
