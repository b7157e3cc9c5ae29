#pragma once

#include <vector>

#include "apa/autodiff.hpp"
#include "apa/nn.hpp"

namespace apa {

// Pixel <-> latent mapping. Identity mode is the default: latents are the
// pixels themselves and round trips are bit-exact. The tiny autoencoder is
// an opt-in compressed-latent mode (CxHxW -> 4 x H/2 x W/2).
class Codec {
 public:
  enum class Mode { identity, tiny_autoencoder };

  static Codec identity();
  static Codec tiny_autoencoder_init(int img_channels, uint64_t seed);

  Mode mode() const { return mode_; }
  std::vector<int> latent_shape(const std::vector<int>& image_shape) const;

  Tensor encode(const Tensor& image) const;
  Tensor decode(const Tensor& latent) const;
  ad::Var decode(ad::Tape& tape, ad::Var latent) const;

  // MSE reconstruction training; returns final epoch mean loss.
  double train(const std::vector<Tensor>& images, int epochs, double lr,
               uint64_t seed);

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

 private:
  ad::Var encode_graph(ad::Tape& tape, const nn::WeightProvider& w,
                       ad::Var x) const;
  ad::Var decode_graph(ad::Tape& tape, const nn::WeightProvider& w,
                       ad::Var z) const;
  Mode mode_ = Mode::identity;
  int img_channels_ = 1;
  nn::ParamStore params_;
};

}  // namespace apa
