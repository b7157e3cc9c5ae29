#pragma once

#include <functional>
#include <limits>
#include <vector>

#include "apa/codec.hpp"
#include "apa/denoiser.hpp"
#include "apa/diffusion_steps.hpp"

namespace apa {

// Full trajectory operations built on the single-step DDIM algebra.

struct InversionResult {
  Tensor z_T;
  // trajectory[t] = z_t for t = 0..T (z_0 = encode(x), z_T last).
  std::vector<Tensor> trajectory;
};

// Per-step callbacks for the denoising loop. The hook fires only for steps
// t <= active_max_t; `adjust_eps` may replace the noise prediction before
// the step is taken (attack guidance), `observe_z0` sees the recorded
// single-step z0 prediction computed from the adjusted eps.
struct StepCallbacks {
  int active_max_t = std::numeric_limits<int>::max();
  std::function<Tensor(int t, const Tensor& z_t, const Tensor& eps_pred)> adjust_eps;
  std::function<void(int t, const Tensor& z0_pred)> observe_z0;
};

struct DenoiseResult {
  Tensor x_out;   // decode(z_bar0)
  Tensor z_bar0;  // final latent
  // z0_per_step[i] is the prediction recorded at step t = T - i.
  std::vector<Tensor> z0_per_step;
};

InversionResult full_inversion(const Tensor& image, const AdaptedDenoiser& den,
                               const Conditioning& cond,
                               const NoiseSchedule& sched, const Codec& codec);

DenoiseResult full_denoise(const Tensor& z_T, const AdaptedDenoiser& den,
                           const Conditioning& cond, const NoiseSchedule& sched,
                           const Codec& codec,
                           const StepCallbacks* callbacks = nullptr);

struct DenoiserTrainConfig {
  int epochs = 14;
  int batch_size = 4;
  double lr = 2e-3;
  uint64_t seed = 1;
  bool class_conditional = false;  // feed class codes instead of the null code
};

// Noise-prediction training (the standard denoising objective): each sample
// draws (t, eps), corrupts the latent, and regresses the injected noise.
// Deterministic given the seed. Labels are only consulted in
// class-conditional mode.
Denoiser train_denoiser(const std::vector<Tensor>& images,
                        const std::vector<int>& labels,
                        const NoiseSchedule& sched, const Codec& codec,
                        const DenoiserConfig& cfg,
                        const DenoiserTrainConfig& train_cfg);

// Mean per-sample noise-prediction loss ||eps - eps_hat||^2 over a fixed
// probe of (t, eps) draws; the probe is derived from `probe_seed` so the
// number is reproducible.
double denoiser_probe_loss(const AdaptedDenoiser& den,
                           const std::vector<Tensor>& images,
                           const std::vector<int>& labels, bool class_conditional,
                           const NoiseSchedule& sched, const Codec& codec,
                           int draws_per_image, uint64_t probe_seed);

}  // namespace apa
