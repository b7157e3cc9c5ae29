#pragma once

#include <memory>
#include <optional>
#include <string>

#include "apa/autodiff.hpp"
#include "apa/lora.hpp"
#include "apa/nn.hpp"
#include "apa/schedule.hpp"

namespace apa {

struct DenoiserConfig {
  int channels = 1;    // latent channels
  int height = 32;
  int width = 32;
  int base_width = 10; // channel width of the first stage
  int cond_dim = 16;
  int embed_dim = 32;  // time/conditioning embedding width
  int num_classes = 4;

  bool operator==(const DenoiserConfig&) const = default;
};

// Conditioning vector fed to the noise predictor. `null_cond` is the fixed
// all-zeros embedding; `class_cond` uses a fixed deterministic per-class
// code; `free_cond` carries an arbitrary (possibly optimized) embedding.
struct Conditioning {
  enum class Kind { null_cond, class_cond, free_cond };
  Kind kind = Kind::null_cond;
  int label = -1;
  Tensor embedding;

  static Conditioning null_of(int dim);
  static Conditioning class_of(int dim, int label, int num_classes);
  static Conditioning free_of(Tensor emb);
};

// Small U-Net-style noise predictor on CxHxW latents: two stride-2 stages
// down, residual blocks at each scale, additive skips back up. Conditions on
// log-SNR of the current step plus the conditioning embedding, so one
// trained model serves subsampled schedules of any length.
class Denoiser {
 public:
  Denoiser() = default;
  static Denoiser init(const DenoiserConfig& cfg, uint64_t seed);

  const DenoiserConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // Core forward pass; weights come from the provider so the same graph
  // serves inference, base training and adapter training. The conditioning
  // embedding is a tape Var so it can itself be optimized.
  ad::Var forward(ad::Tape& tape, const nn::WeightProvider& weights, ad::Var z,
                  double log_snr, ad::Var cond_embedding) const;
  ad::Var forward(ad::Tape& tape, const nn::WeightProvider& weights, ad::Var z,
                  double log_snr, const Conditioning& cond) const;

  // No-grad convenience: fresh tape, constant weights.
  Tensor predict(const Tensor& z, int t, const NoiseSchedule& sched,
                 const Conditioning& cond) const;

 private:
  DenoiserConfig cfg_;
  nn::ParamStore params_;
};

// Weight provider that adds scale*B@A deltas on top of constant base
// weights. With train_adapter=true the A/B factors become trainable leaves
// recorded in `binding` under "<layer>.lora_a" / "<layer>.lora_b".
nn::WeightProvider lora_provider(ad::Tape& tape, const nn::ParamStore& base,
                                 const LoRAAdapter& adapter, bool train_adapter,
                                 std::shared_ptr<nn::Binding> binding = nullptr);

// Denoiser view with an optional merged adapter: prediction uses base
// weights when no adapter is attached, base+delta otherwise. The merge is
// precomputed once so repeated predictions stay cheap.
class AdaptedDenoiser {
 public:
  AdaptedDenoiser(const Denoiser& base, const LoRAAdapter* adapter);

  const Denoiser& model() const { return *base_; }
  const nn::ParamStore& effective_params() const {
    return adapter_ ? merged_ : base_->params();
  }
  bool has_adapter() const { return adapter_ != nullptr; }

  Tensor predict(const Tensor& z, int t, const NoiseSchedule& sched,
                 const Conditioning& cond) const;
  ad::Var forward_const_weights(ad::Tape& tape, ad::Var z, double log_snr,
                                const Conditioning& cond) const;
  // Same but with an on-tape conditioning embedding (prompt optimization).
  ad::Var forward_const_weights(ad::Tape& tape, ad::Var z, double log_snr,
                                ad::Var cond_embedding) const;

 private:
  const Denoiser* base_;
  const LoRAAdapter* adapter_;
  nn::ParamStore merged_;
};

}  // namespace apa
