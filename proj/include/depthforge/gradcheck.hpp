#pragma once

#include <functional>
#include <string>
#include <vector>

#include "depthforge/param.hpp"
#include "depthforge/tensor.hpp"

namespace df {

struct GradCheckEntry {
  std::string name;
  std::size_t probes = 0;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
};

struct GradCheckResult {
  std::vector<GradCheckEntry> per_param;
  double worst_rel_err = 0.0;
  double worst_abs_err = 0.0;
  std::string worst_param;

  bool passed(double tol) const { return worst_rel_err <= tol; }
};

// Central-difference check of d(loss)/d(theta) for every trainable parameter.
// loss_fn must rebuild the forward pass from current parameter values each
// call and return a scalar. eps must lie in [1e-7, 1e-3]. When a parameter
// has more entries than max_probes_per_param, a random subset is probed
// (0 means probe everything). Errors are relative:
// |analytic - fd| / max(1, |analytic|, |fd|).
GradCheckResult finite_diff_check(ParamStore& params,
                                  const std::function<Tensor(Tape&)>& loss_fn, double eps,
                                  std::size_t max_probes_per_param, std::mt19937_64& rng);

}  // namespace df
