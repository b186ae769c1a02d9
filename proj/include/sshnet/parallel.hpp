// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace sshnet {

/// Runs fn(i) for i in [0, n) over up to `threads` std::threads in contiguous
/// blocks. Exceptions are rethrown on the caller.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace sshnet
