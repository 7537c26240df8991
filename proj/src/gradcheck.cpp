#include "depthforge/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace df {

namespace {

double eval_loss(const std::function<Tensor(Tape&)>& loss_fn) {
  Tape tape(false);
  Tensor loss = loss_fn(tape);
  double v = loss.scalar_value();
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: loss is non-finite");
  return v;
}

}  // namespace

GradCheckResult finite_diff_check(ParamStore& params,
                                  const std::function<Tensor(Tape&)>& loss_fn, double eps,
                                  std::size_t max_probes_per_param, std::mt19937_64& rng) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ConfigError("finite_diff_check: eps must lie in [1e-7, 1e-3]");
  }

  // One recorded pass gives every analytic gradient at once.
  params.zero_grads();
  Tape tape;
  Tensor loss = loss_fn(tape);
  double base = loss.scalar_value();
  if (!std::isfinite(base)) throw NumericError("finite_diff_check: loss is non-finite");
  tape.backward(loss);

  GradCheckResult result;
  for (auto& p : params.all()) {
    if (!p.trainable) continue;
    const std::size_t n = p.tensor.numel();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::size_t probes = n;
    if (max_probes_per_param != 0 && max_probes_per_param < n) {
      probes = max_probes_per_param;
      // Partial Fisher-Yates: the first `probes` entries are a uniform sample.
      for (std::size_t i = 0; i < probes; ++i) {
        std::size_t j = i + uniform_index(rng, n - i);
        std::swap(idx[i], idx[j]);
      }
    }

    GradCheckEntry entry{p.name, probes, 0.0, 0.0};
    auto vals = p.tensor.values();
    auto grads = p.tensor.grads();
    for (std::size_t k = 0; k < probes; ++k) {
      const std::size_t i = idx[k];
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double lp = eval_loss(loss_fn);
      vals[i] = saved - eps;
      const double lm = eval_loss(loss_fn);
      vals[i] = saved;
      const double fd = (lp - lm) / (2.0 * eps);
      if (!std::isfinite(fd)) {
        throw NumericError("finite_diff_check: non-finite difference quotient for " + p.name);
      }
      const double an = grads[i];
      const double abs_err = std::abs(an - fd);
      const double rel_err = abs_err / std::max({1.0, std::abs(an), std::abs(fd)});
      entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
      entry.max_rel_err = std::max(entry.max_rel_err, rel_err);
    }
    if (entry.max_rel_err >= result.worst_rel_err) {
      result.worst_rel_err = entry.max_rel_err;
      result.worst_abs_err = entry.max_abs_err;
      result.worst_param = entry.name;
    }
    result.per_param.push_back(std::move(entry));
  }
  if (result.per_param.empty()) {
    throw ConfigError("finite_diff_check: no trainable parameters to probe");
  }
  return result;
}

}  // namespace df
