// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>

namespace sshnet {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point of the sshnet tool. Reports go to `out`, diagnostics and
/// progress to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sshnet
