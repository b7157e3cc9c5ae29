#pragma once

#include <map>
#include <string>
#include <utility>

#include "apa/nn.hpp"
#include "apa/tensor.hpp"

namespace apa {

// Low-rank additive delta over a model's weight matrices. For a weight of
// shape (out, in) (convs flattened to (oc, ic*kh*kw)) the delta is
// scale * B @ A with A:(r, in), B:(out, r). B starts at zero so a fresh
// adapter is exactly the zero map.
class LoRAAdapter {
 public:
  struct Layer {
    Tensor a;  // (rank, fan_in)
    Tensor b;  // (fan_out, rank)
  };

  LoRAAdapter() = default;
  LoRAAdapter(int rank, double scale) : rank_(rank), scale_(scale) {}

  // Attaches a layer for every conv/linear ".w" parameter in `params`.
  // The per-layer rank is min(rank, fan_in, fan_out).
  static LoRAAdapter init_for(const nn::ParamStore& params, int rank,
                              double scale, uint64_t seed);

  int rank() const { return rank_; }
  double scale() const { return scale_; }
  const std::map<std::string, Layer>& layers() const { return layers_; }
  std::map<std::string, Layer>& layers() { return layers_; }
  bool adapts(const std::string& name) const { return layers_.count(name) > 0; }

  // Dense delta for one layer, reshaped to the base weight's shape.
  Tensor delta(const std::string& name,
               const std::vector<int>& weight_shape) const;

  // base + delta for every adapted layer; non-adapted entries are copied.
  nn::ParamStore merged_into(const nn::ParamStore& base) const;

  int64_t total_params() const;

 private:
  int rank_ = 0;
  double scale_ = 1.0;
  std::map<std::string, Layer> layers_;
};

}  // namespace apa
