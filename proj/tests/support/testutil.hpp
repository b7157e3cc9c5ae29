#pragma once

#include <cmath>
#include <functional>

#include "apa/rng.hpp"
#include "apa/tensor.hpp"

namespace apa::testutil {

inline double rel_err(double got, double want) {
  double denom = std::max({std::fabs(got), std::fabs(want), 1e-12});
  return std::fabs(got - want) / denom;
}

// Central finite differences of a scalar function w.r.t. one coordinate of x.
inline double central_diff(const std::function<double(const Tensor&)>& f,
                           Tensor x, int64_t coord, double h = 1e-6) {
  double orig = x[coord];
  x[coord] = orig + h;
  double fp = f(x);
  x[coord] = orig - h;
  double fm = f(x);
  x[coord] = orig;
  return (fp - fm) / (2.0 * h);
}

// Max relative error between an analytic gradient and central differences
// over `n_checks` coordinates chosen by `rng`.
inline double max_grad_rel_err(const std::function<double(const Tensor&)>& f,
                               const Tensor& x, const Tensor& analytic_grad,
                               Rng& rng, int n_checks, double h = 1e-6) {
  double worst = 0.0;
  for (int i = 0; i < n_checks; ++i) {
    int64_t coord = static_cast<int64_t>(rng.next_u64() % x.numel());
    double fd = central_diff(f, x, coord, h);
    double an = analytic_grad[coord];
    double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
    worst = std::max(worst, std::fabs(fd - an) / denom);
  }
  return worst;
}

}  // namespace apa::testutil
