#include "apa/lora.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "apa/rng.hpp"

namespace apa {

namespace {
// (fan_out, fan_in) of a weight tensor; convs flatten the kernel dims.
std::pair<int, int> fans(const Tensor& w) {
  if (w.ndim() == 2) return {w.dim(0), w.dim(1)};
  if (w.ndim() == 4) return {w.dim(0), w.dim(1) * w.dim(2) * w.dim(3)};
  return {0, 0};
}
}  // namespace

LoRAAdapter LoRAAdapter::init_for(const nn::ParamStore& params, int rank,
                                  double scale, uint64_t seed) {
  if (rank < 1) throw std::invalid_argument("LoRAAdapter: rank must be >= 1");
  LoRAAdapter ad(rank, scale);
  Rng rng(seed);
  for (const auto& [name, w] : params.tensors) {
    if (name.size() < 2 || name.substr(name.size() - 2) != ".w") continue;
    auto [out, in] = fans(w);
    if (out == 0) continue;
    int r = std::min({rank, out, in});
    Layer layer;
    layer.a = rng.normal_tensor({r, in}, 1.0 / std::sqrt(static_cast<double>(in)));
    layer.b = Tensor::zeros({out, r});
    ad.layers_.emplace(name, std::move(layer));
  }
  return ad;
}

Tensor LoRAAdapter::delta(const std::string& name,
                          const std::vector<int>& weight_shape) const {
  const Layer& l = layers_.at(name);
  int r = l.a.dim(0), in = l.a.dim(1), out = l.b.dim(0);
  Tensor d(weight_shape);
  if (d.numel() != static_cast<int64_t>(out) * in)
    throw std::invalid_argument("LoRAAdapter::delta: shape mismatch for " + name);
  for (int i = 0; i < out; ++i)
    for (int k = 0; k < r; ++k) {
      double bv = scale_ * l.b[static_cast<int64_t>(i) * r + k];
      if (bv == 0.0) continue;
      const double* arow = l.a.data() + static_cast<int64_t>(k) * in;
      double* drow = d.data() + static_cast<int64_t>(i) * in;
      for (int j = 0; j < in; ++j) drow[j] += bv * arow[j];
    }
  return d;
}

nn::ParamStore LoRAAdapter::merged_into(const nn::ParamStore& base) const {
  nn::ParamStore merged;
  for (const auto& [name, w] : base.tensors) {
    if (adapts(name)) {
      Tensor m = w;
      m += delta(name, w.shape());
      merged.add(name, std::move(m));
    } else {
      merged.add(name, w);
    }
  }
  return merged;
}

int64_t LoRAAdapter::total_params() const {
  int64_t n = 0;
  for (const auto& [name, l] : layers_) n += l.a.numel() + l.b.numel();
  return n;
}

}  // namespace apa
