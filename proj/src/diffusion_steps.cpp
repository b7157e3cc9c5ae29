#include "apa/diffusion_steps.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace apa {

namespace {
void check_step(int t, const NoiseSchedule& sched, const char* where) {
  if (t < 1 || t > sched.total_steps())
    throw std::out_of_range(std::string(where) + ": step " + std::to_string(t) +
                            " outside [1," + std::to_string(sched.total_steps()) +
                            "]");
}

Tensor lincomb_t(double alpha, const Tensor& a, double beta, const Tensor& b,
                 const char* where) {
  require_same_shape(a, b, where);
  Tensor out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = alpha * a[i] + beta * b[i];
  return out;
}
}  // namespace

StepCoeffs denoise_coeffs(int t, const NoiseSchedule& sched) {
  double ab_t = sched.ab(t);
  double ab_prev = sched.ab(t - 1);
  double a = std::sqrt(ab_prev / ab_t);
  double b = std::sqrt(1.0 - ab_prev) - a * std::sqrt(1.0 - ab_t);
  return {a, b};
}

StepCoeffs invert_coeffs(int t, const NoiseSchedule& sched) {
  double ab_t = sched.ab(t);
  double ab_prev = sched.ab(t - 1);
  double a = std::sqrt(ab_t / ab_prev);
  double b = std::sqrt(1.0 - ab_t) - a * std::sqrt(1.0 - ab_prev);
  return {a, b};
}

StepCoeffs predict_z0_coeffs(int t, const NoiseSchedule& sched) {
  double ab_t = sched.ab(t);
  double inv = 1.0 / std::sqrt(ab_t);
  return {inv, -inv * std::sqrt(1.0 - ab_t)};
}

Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps,
                       const NoiseSchedule& sched) {
  check_step(t, sched, "forward_diffuse");
  return lincomb_t(sched.sqrt_ab(t), z0, sched.sqrt_one_minus_ab(t), eps,
                   "forward_diffuse");
}

Tensor denoise_step(const Tensor& z_t, int t, const Tensor& eps_pred,
                    const NoiseSchedule& sched) {
  check_step(t, sched, "denoise_step");
  StepCoeffs c = denoise_coeffs(t, sched);
  return lincomb_t(c.a, z_t, c.b, eps_pred, "denoise_step");
}

Tensor invert_step(const Tensor& z_prev, int t, const Tensor& eps_pred,
                   const NoiseSchedule& sched) {
  check_step(t, sched, "invert_step");
  StepCoeffs c = invert_coeffs(t, sched);
  return lincomb_t(c.a, z_prev, c.b, eps_pred, "invert_step");
}

Tensor predict_z0(const Tensor& z_t, int t, const Tensor& eps_pred,
                  const NoiseSchedule& sched) {
  check_step(t, sched, "predict_z0");
  StepCoeffs c = predict_z0_coeffs(t, sched);
  return lincomb_t(c.a, z_t, c.b, eps_pred, "predict_z0");
}

namespace tape_ops {

ad::Var forward_diffuse(ad::Tape& tp, ad::Var z0, int t, ad::Var eps,
                        const NoiseSchedule& sched) {
  check_step(t, sched, "forward_diffuse");
  return ad::lincomb(tp, sched.sqrt_ab(t), z0, sched.sqrt_one_minus_ab(t), eps);
}

ad::Var denoise_step(ad::Tape& tp, ad::Var z_t, int t, ad::Var eps_pred,
                     const NoiseSchedule& sched) {
  check_step(t, sched, "denoise_step");
  StepCoeffs c = denoise_coeffs(t, sched);
  return ad::lincomb(tp, c.a, z_t, c.b, eps_pred);
}

ad::Var invert_step(ad::Tape& tp, ad::Var z_prev, int t, ad::Var eps_pred,
                    const NoiseSchedule& sched) {
  check_step(t, sched, "invert_step");
  StepCoeffs c = invert_coeffs(t, sched);
  return ad::lincomb(tp, c.a, z_prev, c.b, eps_pred);
}

ad::Var predict_z0(ad::Tape& tp, ad::Var z_t, int t, ad::Var eps_pred,
                   const NoiseSchedule& sched) {
  check_step(t, sched, "predict_z0");
  StepCoeffs c = predict_z0_coeffs(t, sched);
  return ad::lincomb(tp, c.a, z_t, c.b, eps_pred);
}

}  // namespace tape_ops
}  // namespace apa
