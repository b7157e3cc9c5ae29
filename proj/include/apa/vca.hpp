#pragma once

#include <vector>

#include "apa/diffusion.hpp"

namespace apa {

struct VcaConfig {
  double learning_rate = 1e-3;  // plain-ascent step size
  int steps = 200;
  int rank = 4;
  double lora_scale = 1.0;
  uint64_t seed = 0;

  void validate() const;
};

// Single-sample estimate of the visual-consistency reward:
//   -|| eps - eps_hat(forward_diffuse(z0,t,eps), t, c) ||^2   (<= 0)
double vca_reward(const Denoiser& den, const LoRAAdapter* adapter,
                  const Tensor& z0, int t, const Tensor& eps,
                  const Conditioning& cond, const NoiseSchedule& sched);

// Reward plus its gradient w.r.t. the adapter factors (keys
// "<layer>.lora_a"/"<layer>.lora_b"). Base weights stay frozen constants.
double vca_reward_grad(const Denoiser& den, const LoRAAdapter& adapter,
                       const Tensor& z0, int t, const Tensor& eps,
                       const Conditioning& cond, const NoiseSchedule& sched,
                       nn::GradMap& grads_out);

// Fixed (t, eps) probe used to measure reward before/after fine-tuning.
struct VcaProbe {
  std::vector<int> ts;
  std::vector<Tensor> eps;
};
VcaProbe make_vca_probe(const NoiseSchedule& sched, const std::vector<int>& shape,
                        int n, uint64_t seed);
double mean_probe_reward(const Denoiser& den, const LoRAAdapter* adapter,
                         const Tensor& z0, const Conditioning& cond,
                         const NoiseSchedule& sched, const VcaProbe& probe);

// Stage 1: gradient ascent on single-sample rewards with freshly drawn
// (t, eps) each step. Only the adapter moves. Optionally reports the probe
// reward every `trace_every` steps (checkpoint 0 = before any update).
LoRAAdapter vca_finetune(const Denoiser& den, const Tensor& image,
                         const VcaConfig& cfg, const Conditioning& cond,
                         const NoiseSchedule& sched, const Codec& codec,
                         const VcaProbe* trace_probe = nullptr,
                         int trace_every = 0,
                         std::vector<double>* trace_out = nullptr);

struct RobustnessSummary {
  double mean_error = 0.0;            // mean absolute pixel error vs. input
  std::vector<double> per_trial;
};

// Inverts the image once, perturbs z_T with n_trials Gaussian draws of
// scale sigma, denoises each and measures pixel error against the input.
RobustnessSummary reconstruction_robustness(const Denoiser& den,
                                            const LoRAAdapter* adapter,
                                            const Tensor& image, double sigma,
                                            int n_trials, uint64_t seed,
                                            const Conditioning& cond,
                                            const NoiseSchedule& sched,
                                            const Codec& codec);

}  // namespace apa
