#pragma once

#include <vector>

#include "apa/classifiers.hpp"
#include "apa/tensor.hpp"

namespace apa {

// Percentage of batch entries the classifier assigns a label != truth.
double asr(const Classifier& cls, const std::vector<Tensor>& batch,
           const std::vector<int>& labels);

// Windowed SSIM, uniform 7x7 windows over valid positions, sample
// covariance normalization, stabilizers (0.01*L)^2 / (0.03*L)^2 with L = 1.
// Mean over windows and channels.
double ssim(const Tensor& x, const Tensor& y);

// L2 distance between penultimate-layer features of the probe classifier,
// divided by the feature dimension.
double perceptual_distance(const Tensor& x, const Tensor& y,
                           const Classifier& probe, const Classifier& substitute);

}  // namespace apa
