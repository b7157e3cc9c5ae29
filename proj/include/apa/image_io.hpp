#pragma once

#include <string>

#include "apa/tensor.hpp"

namespace apa {

// 8-bit PNG round trip for CxHxW tensors in [0,1] (C = 1 grayscale or
// C = 3 RGB). Values are clamped then quantized to 256 levels on write.
void write_png(const std::string& path, const Tensor& image);
Tensor read_png(const std::string& path);

}  // namespace apa
