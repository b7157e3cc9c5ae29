#include "apa/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace apa::nn {

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end())
    throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end())
    throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::add(const std::string& name, Tensor t) {
  if (!tensors.emplace(name, std::move(t)).second)
    throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
}

int64_t ParamStore::total_params() const {
  int64_t n = 0;
  for (const auto& [name, t] : tensors) n += t.numel();
  return n;
}

GradMap Binding::grads() const {
  GradMap g;
  for (const auto& [name, var] : vars) g.emplace(name, tape->grad(var));
  return g;
}

WeightProvider constant_provider(ad::Tape& tape, const ParamStore& params,
                                 std::shared_ptr<Binding> cache) {
  if (!cache) cache = std::make_shared<Binding>();
  cache->tape = &tape;
  return WeightProvider([&tape, &params, cache](const std::string& name) {
    auto it = cache->vars.find(name);
    if (it != cache->vars.end()) return it->second;
    ad::Var v = tape.constant(params.at(name));
    cache->vars.emplace(name, v);
    return v;
  });
}

WeightProvider trainable_provider(ad::Tape& tape, const ParamStore& params,
                                  std::shared_ptr<Binding> binding) {
  binding->tape = &tape;
  return WeightProvider([&tape, &params, binding](const std::string& name) {
    auto it = binding->vars.find(name);
    if (it != binding->vars.end()) return it->second;
    ad::Var v = tape.leaf(params.at(name), true);
    binding->vars.emplace(name, v);
    return v;
  });
}

void Adam::step(ParamStore& params, const GradMap& grads) {
  ++steps_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    require_same_shape(p, g, "Adam::step");
    auto mit = m_.find(name);
    if (mit == m_.end()) {
      m_.emplace(name, Tensor::zeros(p.shape()));
      v_.emplace(name, Tensor::zeros(p.shape()));
    }
    Tensor& m = m_.at(name);
    Tensor& v = v_.at(name);
    for (int64_t i = 0; i < p.numel(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mh = m[i] / bc1;
      double vh = v[i] / bc2;
      p[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }
}

Tensor conv_init(Rng& rng, int oc, int ic, int kh, int kw) {
  double std = std::sqrt(1.0 / (static_cast<double>(ic) * kh * kw));
  return rng.normal_tensor({oc, ic, kh, kw}, std);
}

Tensor linear_init(Rng& rng, int out, int in) {
  double std = std::sqrt(1.0 / static_cast<double>(in));
  return rng.normal_tensor({out, in}, std);
}

}  // namespace apa::nn
