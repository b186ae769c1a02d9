// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>

#include "sshnet/autograd.hpp"

namespace sshnet {

struct GradReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  /// "<parameter name>[<flat index>]" of the worst relative error.
  std::string worst_param_path;
  std::size_t coordinates = 0;
  double tolerance = 0.0;
  bool passed = true;
};

/// Builds the scalar loss into the given graph.
using LossFn = std::function<Var(Graph&)>;

/// Compares analytic gradients of `loss` w.r.t. every coordinate of `params`
/// against central differences (f(x+eps) - f(x-eps)) / 2eps. Relative error of
/// a coordinate is |a - n| / max(|a|, |n|, 1e-8). Throws CheckError if the loss
/// is not reproducible or eps is outside [1e-7, 1e-3].
GradReport grad_check(const LossFn& loss, const ParamList& params, double eps, double tol);

}  // namespace sshnet
