// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "sshnet/rng.hpp"
#include "sshnet/tensor.hpp"

namespace sshnet::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

/// Small integers in [-4, 4], so products and sums are exact in f64.
inline Tensor integer_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<double>(static_cast<int>(rng.index(9)) - 4);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double cosine_ref(const double* u, const double* v, std::size_t n) {
  double uv = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < n; ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (std::sqrt(uu) < 1e-12 || std::sqrt(vv) < 1e-12) return 0.0;
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("sshnet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace sshnet::testing
