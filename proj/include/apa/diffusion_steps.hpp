#pragma once

#include "apa/autodiff.hpp"
#include "apa/schedule.hpp"
#include "apa/tensor.hpp"

namespace apa {

// Single-step DDIM algebra. Each op exists in a plain Tensor form and in a
// tape form so the same formulas serve inference and gradient paths.

// sqrt(ab_t) * z0 + sqrt(1 - ab_t) * eps
Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps,
                       const NoiseSchedule& sched);

// sqrt(ab_{t-1}) * (z_t - sqrt(1-ab_t)*eps_pred) / sqrt(ab_t)
//   + sqrt(1-ab_{t-1}) * eps_pred
Tensor denoise_step(const Tensor& z_t, int t, const Tensor& eps_pred,
                    const NoiseSchedule& sched);

// sqrt(ab_t) * (z_{t-1} - sqrt(1-ab_{t-1})*eps_pred) / sqrt(ab_{t-1})
//   + sqrt(1-ab_t) * eps_pred
Tensor invert_step(const Tensor& z_prev, int t, const Tensor& eps_pred,
                   const NoiseSchedule& sched);

// (z_t - sqrt(1-ab_t)*eps_pred) / sqrt(ab_t)
Tensor predict_z0(const Tensor& z_t, int t, const Tensor& eps_pred,
                  const NoiseSchedule& sched);

namespace tape_ops {
ad::Var forward_diffuse(ad::Tape& tp, ad::Var z0, int t, ad::Var eps,
                        const NoiseSchedule& sched);
ad::Var denoise_step(ad::Tape& tp, ad::Var z_t, int t, ad::Var eps_pred,
                     const NoiseSchedule& sched);
ad::Var invert_step(ad::Tape& tp, ad::Var z_prev, int t, ad::Var eps_pred,
                    const NoiseSchedule& sched);
ad::Var predict_z0(ad::Tape& tp, ad::Var z_t, int t, ad::Var eps_pred,
                   const NoiseSchedule& sched);
}  // namespace tape_ops

// Shared coefficient helpers (validated against the formulas above).
struct StepCoeffs {
  double a;  // multiplier of the latent
  double b;  // multiplier of eps_pred
};
StepCoeffs denoise_coeffs(int t, const NoiseSchedule& sched);
StepCoeffs invert_coeffs(int t, const NoiseSchedule& sched);
StepCoeffs predict_z0_coeffs(int t, const NoiseSchedule& sched);

}  // namespace apa
