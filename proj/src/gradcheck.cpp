// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "sshnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "sshnet/errors.hpp"

namespace sshnet {
namespace {

double evaluate(const LossFn& loss) {
  Graph g(false);
  return loss(g).value()[0];
}

}  // namespace

GradReport grad_check(const LossFn& loss, const ParamList& params, double eps, double tol) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw CheckError("grad_check: eps " + std::to_string(eps) + " outside [1e-7, 1e-3]");
  }
  for (Parameter* p : params) p->zero_grad();

  double base = 0.0;
  {
    Graph g;
    Var out = loss(g);
    if (out.value().size() != 1) throw CheckError("grad_check: loss is not a scalar");
    base = out.value()[0];
    g.backward(out);
  }
  const double again = evaluate(loss);
  if (again != base) {
    throw CheckError("grad_check: loss is not deterministic (" + std::to_string(base) + " then " +
                     std::to_string(again) + ")");
  }

  GradReport report;
  report.tolerance = tol;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double up = evaluate(loss);
      p->value[i] = saved - eps;
      const double down = evaluate(loss);
      p->value[i] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad[i];
      const double abs_err = std::abs(analytic - numeric);
      const double rel_err = abs_err / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      ++report.coordinates;
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      if (report.worst_param_path.empty() || rel_err > report.max_rel_err) {
        report.max_rel_err = rel_err;
        report.worst_param_path = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  report.passed = report.max_rel_err <= tol;
  return report;
}

}  // namespace sshnet
