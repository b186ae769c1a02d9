// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

#include "sshnet/rng.hpp"
#include "sshnet/tensor.hpp"

namespace sshnet {

/// Glorot/Xavier uniform in [-a, a], a = sqrt(6 / (fan_in + fan_out)).
inline Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data()) v = rng.uniform(-a, a);
  return t;
}

/// [out x in] projection matrix.
inline Parameter linear_weight(std::string name, std::size_t out, std::size_t in, Rng& rng) {
  return Parameter(std::move(name), xavier_uniform({out, in}, in, out, rng));
}

inline Parameter zeros(std::string name, Shape shape) { return Parameter(std::move(name), Tensor(std::move(shape))); }

}  // namespace sshnet
