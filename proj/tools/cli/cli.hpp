// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "ta2n/error.hpp"

namespace ta2n::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;      // bad flags, unknown config keys, impossible configs
inline constexpr int kExitNumerical = 3;  // divergence, failed gradient check
inline constexpr int kExitIo = 4;         // missing files, corrupt or incompatible versions

int exit_code_for(ErrorCode code);

// Runs one command line (args[0] is the program name). Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ta2n::cli
