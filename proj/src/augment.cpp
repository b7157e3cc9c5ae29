#include "apa/augment.hpp"

#include <stdexcept>

#include "apa/rng.hpp"

namespace apa {

void AugmentSpec::validate(int height, int width) const {
  if (pad_max < 0)
    throw std::invalid_argument("AugmentSpec: pad_max must be >= 0");
  if (pad_max >= std::min(height, width) / 2)
    throw std::invalid_argument("AugmentSpec: pad_max must be < min(H,W)/2");
  if (!(brightness_lo > 0.0) || !(brightness_lo <= 1.0) || !(brightness_hi >= 1.0))
    throw std::invalid_argument("AugmentSpec: need 0 < lo <= 1 <= hi");
}

AugmentParams augment_params(const AugmentSpec& spec, uint64_t invocation) {
  Rng rng(derive_seed(spec.seed, "augment", invocation));
  AugmentParams p;
  p.pad = spec.pad_max == 0 ? 0 : rng.uniform_int(0, spec.pad_max);
  p.brightness = rng.uniform(spec.brightness_lo, spec.brightness_hi);
  return p;
}

Tensor augment_apply(const AugmentSpec& spec, const Tensor& image,
                     uint64_t invocation) {
  ad::Tape tape;
  ad::Var out = augment_apply(tape, spec, tape.constant(image), invocation);
  return tape.value(out);
}

ad::Var augment_apply(ad::Tape& tape, const AugmentSpec& spec, ad::Var image,
                      uint64_t invocation) {
  const Tensor& v = tape.value(image);
  if (v.ndim() != 3)
    throw std::invalid_argument("augment_apply: image must be CxHxW");
  if (!v.all_finite())
    throw std::invalid_argument("augment_apply: non-finite input");
  int h = v.dim(1), w = v.dim(2);
  spec.validate(h, w);
  AugmentParams p = augment_params(spec, invocation);
  ad::Var out = image;
  if (p.pad > 0) {
    out = ad::pad2d_zero(tape, out, p.pad);
    out = ad::bilinear_resize(tape, out, h, w);
  }
  // brightness is applied after the resize; the order is fixed
  return ad::scale(tape, out, p.brightness);
}

}  // namespace apa
