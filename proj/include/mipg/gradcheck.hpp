#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "mipg/autodiff.hpp"

namespace mipg {

/// Central differences of a scalar `eval()` with respect to every entry of `x`, restoring x afterwards.
template <class Eval>
std::vector<double> central_differences(Eval&& eval, std::span<double> x, double h) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = eval();
    x[i] = saved - h;
    const double down = eval();
    x[i] = saved;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

/// max_i |analytic_i - numeric_i| / max(1, |numeric_i|)
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw DimensionError("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / std::max(1.0, std::abs(numeric[i])));
  return worst;
}

/**
 * Compares the tape gradient of a scalar function against central
 * differences. `f(Tape&, Var x) -> Var` must build a scalar on the given tape.
 */
template <class F>
double grad_check(F&& f, Tensor x, double h = 1e-5) {
  if (!(h > 0.0)) throw DomainError("grad_check: step must be positive");
  std::vector<double> analytic;
  {
    Tape tape;
    Var xv = tape.leaf(x);
    Var loss = f(tape, xv);
    tape.backward(loss);
    const auto g = xv.grad();
    analytic.assign(g.begin(), g.end());
    if (analytic.empty()) analytic.assign(x.numel(), 0.0);
  }
  auto eval = [&] {
    Tape tape;
    return f(tape, tape.input(x)).value()[0];
  };
  const auto numeric = central_differences(eval, x.values(), h);
  return max_relative_error(analytic, numeric);
}

}  // namespace mipg
