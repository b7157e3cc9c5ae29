#pragma once

#include <cstdint>

#include "apa/autodiff.hpp"
#include "apa/tensor.hpp"

namespace apa {

// Differentiable augmentation: zero-fill pad by a sampled border, bilinear
// resize back to the input shape, then a sampled brightness factor. The
// sampled parameters depend only on (seed, invocation), never on the image.
struct AugmentSpec {
  int pad_max = 4;
  double brightness_lo = 0.9;
  double brightness_hi = 1.1;
  uint64_t seed = 0;

  void validate(int height, int width) const;
};

struct AugmentParams {
  int pad = 0;
  double brightness = 1.0;
};

AugmentParams augment_params(const AugmentSpec& spec, uint64_t invocation);

Tensor augment_apply(const AugmentSpec& spec, const Tensor& image,
                     uint64_t invocation);
ad::Var augment_apply(ad::Tape& tape, const AugmentSpec& spec, ad::Var image,
                      uint64_t invocation);

}  // namespace apa
