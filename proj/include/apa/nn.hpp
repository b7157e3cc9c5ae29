#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>

#include "apa/autodiff.hpp"
#include "apa/rng.hpp"
#include "apa/tensor.hpp"

namespace apa::nn {

using GradMap = std::map<std::string, Tensor>;

// Named parameter set. std::map keeps iteration order deterministic, which
// checkpoint serialization and optimizer updates rely on.
struct ParamStore {
  std::map<std::string, Tensor> tensors;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  void add(const std::string& name, Tensor t);
  bool has(const std::string& name) const { return tensors.count(name) > 0; }
  int64_t total_params() const;
};

// Supplies tape Vars for parameter names during a forward pass. Concrete
// providers decide whether a weight is a constant, a trainable leaf, or a
// base weight plus a low-rank delta.
class WeightProvider {
 public:
  explicit WeightProvider(std::function<ad::Var(const std::string&)> fn)
      : fn_(std::move(fn)) {}
  ad::Var operator()(const std::string& name) const { return fn_(name); }

 private:
  std::function<ad::Var(const std::string&)> fn_;
};

// Tracks the leaf Var bound to each parameter so gradients can be collected
// after backward().
struct Binding {
  ad::Tape* tape = nullptr;
  std::map<std::string, ad::Var> vars;
  GradMap grads() const;
};

// All parameters as constants (inference).
WeightProvider constant_provider(ad::Tape& tape, const ParamStore& params,
                                 std::shared_ptr<Binding> cache = nullptr);

// All parameters as trainable leaves; Vars recorded in `binding`.
WeightProvider trainable_provider(ad::Tape& tape, const ParamStore& params,
                                  std::shared_ptr<Binding> binding);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
  void step(ParamStore& params, const GradMap& grads);

 private:
  AdamConfig cfg_;
  std::map<std::string, Tensor> m_, v_;
  int64_t steps_ = 0;
};

// LeCun-normal initializers.
Tensor conv_init(Rng& rng, int oc, int ic, int kh, int kw);
Tensor linear_init(Rng& rng, int out, int in);

}  // namespace apa::nn
