#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "apa/nn.hpp"
#include "apa/tensor.hpp"

namespace apa {

// Checkpoint container: "APAC" magic + version, a JSON manifest (metadata
// plus per-tensor shape/offset), then a flat little-endian float64 payload.
// One file per model; tensors keyed by parameter name.
struct Container {
  nlohmann::json meta;  // schedule, shapes, seeds, ... (free-form object)
  std::map<std::string, Tensor> tensors;

  static Container from_params(const nn::ParamStore& params,
                               nlohmann::json meta = nlohmann::json::object());
  nn::ParamStore to_params() const;
};

void save_container(const std::string& path, const Container& c);
Container load_container(const std::string& path);

}  // namespace apa
