#ifndef QCAPS_CLI_HPP_
#define QCAPS_CLI_HPP_

#include <iosfwd>
#include <string>
#include <vector>

namespace qcaps::cli {

/// Entry point of the `qcaps` tool. Returns the process exit status: 0 iff
/// the requested artifacts were written.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace qcaps::cli

#endif // QCAPS_CLI_HPP_
