#pragma once

#include <stdexcept>
#include <string>

namespace apa {

// Non-finite value produced where the pipeline requires finite math.
struct NumericalFailure : std::runtime_error {
  explicit NumericalFailure(const std::string& what) : std::runtime_error(what) {}
};

// Training did not reach its contract (divergence, accuracy gate, ...).
struct TrainingFailure : std::runtime_error {
  explicit TrainingFailure(const std::string& what) : std::runtime_error(what) {}
};

// A configuration that is syntactically valid but produces an empty or
// meaningless computation (e.g. zero guided steps with augmentation on).
struct DegenerateConfig : std::invalid_argument {
  explicit DegenerateConfig(const std::string& what) : std::invalid_argument(what) {}
};

}  // namespace apa
