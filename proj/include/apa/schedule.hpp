#pragma once

#include <cmath>
#include <vector>

#include "apa/tensor.hpp"

namespace apa {

// Cumulative signal levels alpha_bar[0..T] with alpha_bar[0] == 1 exactly,
// strictly decreasing and strictly positive. Index t in [1,T] is a step of
// the subsampled trajectory; alpha_bar[t] is the signal fraction kept.
class NoiseSchedule {
 public:
  NoiseSchedule(int total_steps, std::vector<double> alpha_bar);

  // Standard linear-beta schedule over `base_steps` (beta linear from
  // beta_start to beta_end), subsampled to `steps` evenly spaced points
  // ending at the last base step.
  static NoiseSchedule linear_beta(int steps, int base_steps = 1000,
                                   double beta_start = 1e-4,
                                   double beta_end = 2e-2);

  int total_steps() const { return total_steps_; }
  const std::vector<double>& alpha_bar() const { return alpha_bar_; }

  double ab(int t) const;  // checked access, 0 <= t <= T

  // log(alpha_bar / (1 - alpha_bar)); the denoiser conditions on this so a
  // single trained model serves schedules of any length. t in [1,T].
  double log_snr(int t) const {
    double a = ab_checked_step(t);
    return std::log(a) - std::log1p(-a);
  }

  double sqrt_ab(int t) const { return std::sqrt(ab(t)); }
  double sqrt_one_minus_ab(int t) const { return std::sqrt(1.0 - ab(t)); }

 private:
  double ab_checked_step(int t) const;
  int total_steps_;
  std::vector<double> alpha_bar_;
};

}  // namespace apa
