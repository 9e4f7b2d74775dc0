#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace blobsurrogate {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command line; args[0] is the program name. Returns the exit code.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_dispatch(int argc, const char* const* argv);

}  // namespace blobsurrogate
