#include "apa/diffusion.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>

#include "apa/errors.hpp"
#include "apa/rng.hpp"

namespace apa {

using ad::Tape;
using ad::Var;

InversionResult full_inversion(const Tensor& image, const AdaptedDenoiser& den,
                               const Conditioning& cond,
                               const NoiseSchedule& sched, const Codec& codec) {
  InversionResult res;
  Tensor z = codec.encode(image);
  res.trajectory.push_back(z);
  for (int t = 1; t <= sched.total_steps(); ++t) {
    Tensor eps = den.predict(z, t, sched, cond);
    z = invert_step(z, t, eps, sched);
    if (!z.all_finite())
      throw NumericalFailure("full_inversion: non-finite latent at step " +
                             std::to_string(t));
    res.trajectory.push_back(z);
  }
  res.z_T = z;
  return res;
}

DenoiseResult full_denoise(const Tensor& z_T, const AdaptedDenoiser& den,
                           const Conditioning& cond, const NoiseSchedule& sched,
                           const Codec& codec, const StepCallbacks* callbacks) {
  DenoiseResult res;
  Tensor z = z_T;
  for (int t = sched.total_steps(); t >= 1; --t) {
    Tensor eps = den.predict(z, t, sched, cond);
    bool hook_active = callbacks && t <= callbacks->active_max_t;
    if (hook_active && callbacks->adjust_eps) eps = callbacks->adjust_eps(t, z, eps);
    Tensor z0_pred = predict_z0(z, t, eps, sched);
    res.z0_per_step.push_back(z0_pred);
    if (hook_active && callbacks->observe_z0) callbacks->observe_z0(t, z0_pred);
    z = denoise_step(z, t, eps, sched);
    if (!z.all_finite())
      throw NumericalFailure("full_denoise: non-finite latent at step " +
                             std::to_string(t));
  }
  res.z_bar0 = z;
  res.x_out = codec.decode(z);
  return res;
}

namespace {

Conditioning cond_for(const DenoiserConfig& cfg, bool class_conditional,
                      int label) {
  if (class_conditional)
    return Conditioning::class_of(cfg.cond_dim, label, cfg.num_classes);
  return Conditioning::null_of(cfg.cond_dim);
}

struct Draw {
  size_t image;
  int t;
  Tensor eps;
};

// One forward+backward for a single (image, t, eps) draw; returns the
// per-sample loss and leaves gradients in `binding`.
double sample_loss_grad(const Denoiser& den, const Tensor& z0, int label,
                        bool class_conditional, const NoiseSchedule& sched,
                        const Draw& d, nn::GradMap& grads_out, double grad_scale) {
  Tape tape;
  auto binding = std::make_shared<nn::Binding>();
  nn::WeightProvider w = nn::trainable_provider(tape, den.params(), binding);
  Tensor z_t = forward_diffuse(z0, d.t, d.eps, sched);
  Conditioning cond = cond_for(den.config(), class_conditional, label);
  Var pred = den.forward(tape, w, tape.constant(z_t), sched.log_snr(d.t), cond);
  Var err = ad::sub(tape, pred, tape.constant(d.eps));
  Var loss = ad::sum_squares(tape, err);
  double lv = tape.value(loss)[0];
  tape.backward(loss);
  for (auto& [name, var] : binding->vars) {
    Tensor g = tape.grad(var);
    auto it = grads_out.find(name);
    if (it == grads_out.end()) {
      g *= grad_scale;
      grads_out.emplace(name, std::move(g));
    } else {
      Tensor& acc = it->second;
      for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += grad_scale * g[i];
    }
  }
  return lv;
}

}  // namespace

Denoiser train_denoiser(const std::vector<Tensor>& images,
                        const std::vector<int>& labels,
                        const NoiseSchedule& sched, const Codec& codec,
                        const DenoiserConfig& cfg,
                        const DenoiserTrainConfig& train_cfg) {
  if (images.empty())
    throw std::invalid_argument("train_denoiser: empty dataset");
  if (train_cfg.class_conditional && labels.size() != images.size())
    throw std::invalid_argument("train_denoiser: labels required for class conditioning");

  Denoiser den = Denoiser::init(cfg, derive_seed(train_cfg.seed, "denoiser-init"));
  std::vector<Tensor> latents;
  latents.reserve(images.size());
  for (const Tensor& img : images) latents.push_back(codec.encode(img));

  Rng rng(derive_seed(train_cfg.seed, "denoiser-train"));
  nn::Adam opt({.lr = train_cfg.lr});
  std::vector<size_t> order(images.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  int T = sched.total_steps();
  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(train_cfg.batch_size)) {
      size_t end = std::min(order.size(),
                            start + static_cast<size_t>(train_cfg.batch_size));
      std::vector<Draw> draws;
      for (size_t k = start; k < end; ++k) {
        Draw d;
        d.image = order[k];
        d.t = rng.uniform_int(1, T);
        d.eps = rng.normal_tensor(latents[d.image].shape());
        draws.push_back(std::move(d));
      }
      double inv = 1.0 / static_cast<double>(draws.size());
      nn::GradMap grads;
      double batch_loss = 0.0;
      for (const Draw& d : draws) {
        int label = labels.empty() ? 0 : labels[d.image];
        batch_loss += sample_loss_grad(den, latents[d.image], label,
                                       train_cfg.class_conditional, sched, d,
                                       grads, inv);
      }
      if (!std::isfinite(batch_loss))
        throw TrainingFailure("train_denoiser: non-finite loss at epoch " +
                              std::to_string(epoch));
      opt.step(den.params(), grads);
    }
  }
  return den;
}

double denoiser_probe_loss(const AdaptedDenoiser& den,
                           const std::vector<Tensor>& images,
                           const std::vector<int>& labels, bool class_conditional,
                           const NoiseSchedule& sched, const Codec& codec,
                           int draws_per_image, uint64_t probe_seed) {
  if (images.empty())
    throw std::invalid_argument("denoiser_probe_loss: empty image set");
  Rng rng(probe_seed);
  int T = sched.total_steps();
  double total = 0.0;
  int count = 0;
  for (size_t i = 0; i < images.size(); ++i) {
    Tensor z0 = codec.encode(images[i]);
    for (int k = 0; k < draws_per_image; ++k) {
      int t = rng.uniform_int(1, T);
      Tensor eps = rng.normal_tensor(z0.shape());
      Tensor z_t = forward_diffuse(z0, t, eps, sched);
      Conditioning cond =
          cond_for(den.model().config(), class_conditional,
                   labels.empty() ? 0 : labels[i]);
      Tensor pred = den.predict(z_t, t, sched, cond);
      Tensor err = pred;
      err -= eps;
      double s = 0.0;
      for (int64_t j = 0; j < err.numel(); ++j) s += err[j] * err[j];
      total += s;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace apa
