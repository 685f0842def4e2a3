#ifndef ACE_COMMANDS_HPP
#define ACE_COMMANDS_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace ace::cli {

inline constexpr const char* kToolVersion = "ace 0.1.0";

enum ExitCode : int { ok = 0, validation = 1, numerical = 2, io = 3 };

/// Entry point shared by the `ace` binary and the integration tests.
/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ace::cli

#endif  // ACE_COMMANDS_HPP
