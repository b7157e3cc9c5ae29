#include "apa/schedule.hpp"

#include <stdexcept>
#include <string>

namespace apa {

NoiseSchedule::NoiseSchedule(int total_steps, std::vector<double> alpha_bar)
    : total_steps_(total_steps), alpha_bar_(std::move(alpha_bar)) {
  if (total_steps_ < 0)
    throw std::invalid_argument("NoiseSchedule: negative step count");
  if (alpha_bar_.size() != static_cast<size_t>(total_steps_) + 1)
    throw std::invalid_argument("NoiseSchedule: alpha_bar must have T+1 entries");
  if (alpha_bar_[0] != 1.0)
    throw std::invalid_argument("NoiseSchedule: alpha_bar[0] must be exactly 1");
  for (int t = 1; t <= total_steps_; ++t) {
    if (!(alpha_bar_[t] > 0.0))
      throw std::invalid_argument("NoiseSchedule: alpha_bar must stay positive");
    if (!(alpha_bar_[t] < alpha_bar_[t - 1]))
      throw std::invalid_argument(
          "NoiseSchedule: alpha_bar must be strictly decreasing (violated at t=" +
          std::to_string(t) + ")");
  }
}

NoiseSchedule NoiseSchedule::linear_beta(int steps, int base_steps,
                                         double beta_start, double beta_end) {
  if (steps < 0 || base_steps < 1 || steps > base_steps)
    throw std::invalid_argument("NoiseSchedule::linear_beta: bad step counts");
  std::vector<double> base(base_steps + 1);
  base[0] = 1.0;
  for (int i = 1; i <= base_steps; ++i) {
    double beta =
        base_steps == 1
            ? beta_start
            : beta_start + (beta_end - beta_start) * (i - 1) / (base_steps - 1);
    base[i] = base[i - 1] * (1.0 - beta);
  }
  std::vector<double> ab(steps + 1);
  ab[0] = 1.0;
  for (int t = 1; t <= steps; ++t) {
    // Evenly spaced base indices ending at base_steps.
    int idx = static_cast<int>(
        std::llround(static_cast<double>(t) * base_steps / steps));
    ab[t] = base[idx];
  }
  return NoiseSchedule(steps, std::move(ab));
}

double NoiseSchedule::ab(int t) const {
  if (t < 0 || t > total_steps_)
    throw std::out_of_range("NoiseSchedule: step " + std::to_string(t) +
                            " outside [0," + std::to_string(total_steps_) + "]");
  return alpha_bar_[t];
}

double NoiseSchedule::ab_checked_step(int t) const {
  if (t < 1 || t > total_steps_)
    throw std::out_of_range("NoiseSchedule: step " + std::to_string(t) +
                            " outside [1," + std::to_string(total_steps_) + "]");
  return alpha_bar_[t];
}

}  // namespace apa
