#pragma once

#include <string>
#include <vector>

#include "apa/tensor.hpp"

namespace apa {

// Deterministic generated corpus of labeled grayscale shape images:
// disk, square, triangle, cross. Each image varies center, size and
// intensity; shapes are antialiased by supersampling. Classes are balanced
// and trivially learnable by small networks yet rich enough for denoising.
struct DatasetSpec {
  int train_count = 512;
  int eval_count = 128;
  int height = 32;
  int width = 32;
  int num_classes = 4;
  uint64_t seed = 0;
};

struct Dataset {
  std::vector<Tensor> images;
  std::vector<int> labels;
  std::vector<std::string> ids;
};

// split is "train" or "eval"; images are a pure function of
// (spec.seed, split, index).
Dataset generate_dataset(const DatasetSpec& spec, const std::string& split);

Tensor shape_image(int label, int height, int width, uint64_t seed);

}  // namespace apa
