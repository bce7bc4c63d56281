#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "crash/diff/tape.hpp"
#include "crash/diff/tensor.hpp"
#include "crash/error.hpp"

namespace crash::diff {

/// Builds a scalar on `tape` from parameter leaves bound in order.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckOptions {
  double h = 1e-5;
  /// Coordinates checked per tensor; 0 checks all of them. Sampled coordinates
  /// are drawn without replacement from `seed`.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::vector<double> per_tensor;  // max relative error per parameter tensor
  std::size_t coords_checked = 0;
};

inline double evaluate_scalar(const ScalarFn& f, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.constant(p));  // values only, no gradient bookkeeping
  const double v = f(tape, leaves).value().item();
  if (!std::isfinite(v)) throw NumericalFault("grad_check: non-finite objective");
  return v;
}

/// Analytic gradients of f at `params`.
inline std::vector<Tensor> analytic_gradients(const ScalarFn& f, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
  Var out = f(tape, leaves);
  tape.backward(out);
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const Var& l : leaves) grads.push_back(tape.grad_or_zero(l));
  return grads;
}

/// Max over coordinates of |analytic - central difference| / max(1, |central difference|).
inline GradCheckResult grad_check(const ScalarFn& f, std::vector<Tensor> params,
                                  const GradCheckOptions& opt = {}) {
  if (!(opt.h > 0.0)) throw PreconditionError("grad_check: h must be positive");
  const std::vector<Tensor> grads = analytic_gradients(f, params);
  GradCheckResult res;
  res.per_tensor.assign(params.size(), 0.0);
  std::mt19937_64 rng(opt.seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::vector<std::size_t> coords(params[p].numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.max_coords_per_tensor != 0 && coords.size() > opt.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t k : coords) {
      const double orig = params[p][k];
      params[p][k] = orig + opt.h;
      const double fp = evaluate_scalar(f, params);
      params[p][k] = orig - opt.h;
      const double fm = evaluate_scalar(f, params);
      params[p][k] = orig;
      const double fd = (fp - fm) / (2.0 * opt.h);
      const double err = std::abs(grads[p][k] - fd) / std::max(1.0, std::abs(fd));
      res.per_tensor[p] = std::max(res.per_tensor[p], err);
      ++res.coords_checked;
    }
    res.max_rel_error = std::max(res.max_rel_error, res.per_tensor[p]);
  }
  return res;
}

}  // namespace crash::diff
