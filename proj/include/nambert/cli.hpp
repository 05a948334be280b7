#pragma once

#include <string>
#include <vector>

namespace nambert {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

// Entry point of the `nambert` tool; args excludes the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace nambert
