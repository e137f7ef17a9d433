#pragma once

#include <string>
#include <vector>

namespace ctsn::cli {

// Exit codes beyond CLI11's own usage errors.
inline constexpr int kExitInput = 2;    // missing files, schema violations
inline constexpr int kExitNumeric = 3;  // non-finite values, divergence
inline constexpr int kExitCheckFailed = 1;

/// Runs `ctsn <subcommand> [flags]`; args exclude the program name.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace ctsn::cli
