#include "apa/vca.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "apa/errors.hpp"
#include "apa/rng.hpp"

namespace apa {

using ad::Tape;
using ad::Var;

void VcaConfig::validate() const {
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("VcaConfig: learning_rate must be > 0");
  if (steps < 0) throw std::invalid_argument("VcaConfig: steps must be >= 0");
  if (rank < 1) throw std::invalid_argument("VcaConfig: rank must be >= 1");
}

namespace {
void check_t(int t, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.total_steps())
    throw std::out_of_range("vca_reward: t outside [1,T]");
}
}  // namespace

double vca_reward(const Denoiser& den, const LoRAAdapter* adapter,
                  const Tensor& z0, int t, const Tensor& eps,
                  const Conditioning& cond, const NoiseSchedule& sched) {
  check_t(t, sched);
  require_same_shape(z0, eps, "vca_reward");
  AdaptedDenoiser ad_den(den, adapter);
  Tensor z_t = forward_diffuse(z0, t, eps, sched);
  Tensor pred = ad_den.predict(z_t, t, sched, cond);
  double s = 0.0;
  for (int64_t i = 0; i < eps.numel(); ++i) {
    double d = eps[i] - pred[i];
    s += d * d;
  }
  return -s;
}

double vca_reward_grad(const Denoiser& den, const LoRAAdapter& adapter,
                       const Tensor& z0, int t, const Tensor& eps,
                       const Conditioning& cond, const NoiseSchedule& sched,
                       nn::GradMap& grads_out) {
  check_t(t, sched);
  Tape tape;
  auto binding = std::make_shared<nn::Binding>();
  nn::WeightProvider w = lora_provider(tape, den.params(), adapter, true, binding);
  Tensor z_t = forward_diffuse(z0, t, eps, sched);
  Var pred = den.forward(tape, w, tape.constant(z_t), sched.log_snr(t), cond);
  Var err = ad::sub(tape, tape.constant(eps), pred);
  Var neg_reward = ad::sum_squares(tape, err);
  double reward = -tape.value(neg_reward)[0];
  tape.backward(neg_reward);
  grads_out.clear();
  // d(reward)/d(param) = -d(neg_reward)/d(param)
  for (auto& [name, var] : binding->vars) {
    Tensor g = tape.grad(var);
    g *= -1.0;
    grads_out.emplace(name, std::move(g));
  }
  return reward;
}

VcaProbe make_vca_probe(const NoiseSchedule& sched, const std::vector<int>& shape,
                        int n, uint64_t seed) {
  Rng rng(seed);
  VcaProbe probe;
  for (int i = 0; i < n; ++i) {
    probe.ts.push_back(rng.uniform_int(1, sched.total_steps()));
    probe.eps.push_back(rng.normal_tensor(shape));
  }
  return probe;
}

double mean_probe_reward(const Denoiser& den, const LoRAAdapter* adapter,
                         const Tensor& z0, const Conditioning& cond,
                         const NoiseSchedule& sched, const VcaProbe& probe) {
  if (probe.ts.empty())
    throw std::invalid_argument("mean_probe_reward: empty probe");
  double s = 0.0;
  for (size_t i = 0; i < probe.ts.size(); ++i)
    s += vca_reward(den, adapter, z0, probe.ts[i], probe.eps[i], cond, sched);
  return s / static_cast<double>(probe.ts.size());
}

LoRAAdapter vca_finetune(const Denoiser& den, const Tensor& image,
                         const VcaConfig& cfg, const Conditioning& cond,
                         const NoiseSchedule& sched, const Codec& codec,
                         const VcaProbe* trace_probe, int trace_every,
                         std::vector<double>* trace_out) {
  cfg.validate();
  Tensor z0 = codec.encode(image);
  LoRAAdapter adapter = LoRAAdapter::init_for(
      den.params(), cfg.rank, cfg.lora_scale, derive_seed(cfg.seed, "lora-init"));
  Rng rng(derive_seed(cfg.seed, "vca-steps"));

  auto trace = [&](int step) {
    if (trace_probe && trace_out && trace_every > 0 && step % trace_every == 0)
      trace_out->push_back(
          mean_probe_reward(den, &adapter, z0, cond, sched, *trace_probe));
  };
  trace(0);

  for (int step = 1; step <= cfg.steps; ++step) {
    int t = rng.uniform_int(1, sched.total_steps());
    Tensor eps = rng.normal_tensor(z0.shape());
    nn::GradMap grads;
    vca_reward_grad(den, adapter, z0, t, eps, cond, sched, grads);
    for (auto& [name, layer] : adapter.layers()) {
      const Tensor& ga = grads.at(name + ".lora_a");
      const Tensor& gb = grads.at(name + ".lora_b");
      if (!ga.all_finite() || !gb.all_finite())
        throw NumericalFailure("vca_finetune: non-finite gradient at step " +
                               std::to_string(step));
      for (int64_t i = 0; i < layer.a.numel(); ++i)
        layer.a[i] += cfg.learning_rate * ga[i];
      for (int64_t i = 0; i < layer.b.numel(); ++i)
        layer.b[i] += cfg.learning_rate * gb[i];
    }
    trace(step);
  }
  return adapter;
}

RobustnessSummary reconstruction_robustness(const Denoiser& den,
                                            const LoRAAdapter* adapter,
                                            const Tensor& image, double sigma,
                                            int n_trials, uint64_t seed,
                                            const Conditioning& cond,
                                            const NoiseSchedule& sched,
                                            const Codec& codec) {
  if (sigma < 0.0)
    throw std::invalid_argument("reconstruction_robustness: sigma must be >= 0");
  if (n_trials < 1)
    throw std::invalid_argument("reconstruction_robustness: n_trials must be >= 1");
  AdaptedDenoiser ad_den(den, adapter);
  InversionResult inv = full_inversion(image, ad_den, cond, sched, codec);
  Rng rng(seed);
  RobustnessSummary out;
  for (int trial = 0; trial < n_trials; ++trial) {
    Tensor z = inv.z_T;
    if (sigma > 0.0) {
      Tensor noise = rng.normal_tensor(z.shape(), sigma);
      z += noise;
    }
    DenoiseResult dn = full_denoise(z, ad_den, cond, sched, codec);
    double err = 0.0;
    for (int64_t i = 0; i < image.numel(); ++i)
      err += std::fabs(dn.x_out[i] - image[i]);
    err /= static_cast<double>(image.numel());
    out.per_trial.push_back(err);
    out.mean_error += err;
  }
  out.mean_error /= static_cast<double>(n_trials);
  return out;
}

}  // namespace apa
