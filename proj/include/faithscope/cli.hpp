#pragma once

#include <string>
#include <vector>

namespace faithscope {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPipelineError = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `faithscope` tool. `args[0]` is the program name.
int run_command(const std::vector<std::string>& args);

}  // namespace faithscope
