#include "apa/denoiser.hpp"

#include <cmath>
#include <stdexcept>

namespace apa {

using ad::Tape;
using ad::Var;

Conditioning Conditioning::null_of(int dim) {
  Conditioning c;
  c.kind = Kind::null_cond;
  c.embedding = Tensor::zeros({dim});
  return c;
}

Conditioning Conditioning::class_of(int dim, int label, int num_classes) {
  if (label < 0 || label >= num_classes)
    throw std::invalid_argument("Conditioning::class_of: label out of range");
  // Fixed per-class codes: unit-scale pseudo-random vectors from a constant
  // seed, identical across experiments.
  Rng rng(derive_seed(0xc1a55c0de5ull, "class-embedding", label));
  Conditioning c;
  c.kind = Kind::class_cond;
  c.label = label;
  c.embedding = rng.normal_tensor({dim}, 1.0 / std::sqrt(static_cast<double>(dim)));
  return c;
}

Conditioning Conditioning::free_of(Tensor emb) {
  Conditioning c;
  c.kind = Kind::free_cond;
  c.embedding = std::move(emb);
  return c;
}

namespace {

Tensor time_features(double log_snr) {
  // 8 frequencies, sin/cos pairs over the normalized log-SNR.
  double u = log_snr / 4.0;
  Tensor f({16});
  double w = 0.5;
  for (int k = 0; k < 8; ++k) {
    f[2 * k] = std::sin(w * u);
    f[2 * k + 1] = std::cos(w * u);
    w *= 2.0;
  }
  return f;
}

struct Ctx {
  Tape& t;
  const nn::WeightProvider& p;
};

Var conv(Ctx& c, Var x, const std::string& name, int stride) {
  return ad::conv2d(c.t, x, c.p(name + ".w"), c.p(name + ".b"), stride, 1);
}

Var lin(Ctx& c, Var x, const std::string& name) {
  return ad::linear(c.t, x, c.p(name + ".w"), c.p(name + ".b"));
}

// conv -> +time bias -> silu -> conv, residual.
Var resblock(Ctx& c, Var x, Var tc, const std::string& name) {
  Var bias = lin(c, tc, name + ".tproj");
  Var h = ad::silu(c.t, ad::add_channel_bias(c.t, conv(c, x, name + ".c1", 1), bias));
  h = conv(c, h, name + ".c2", 1);
  return ad::add(c.t, x, h);
}

}  // namespace

Denoiser Denoiser::init(const DenoiserConfig& cfg, uint64_t seed) {
  Denoiser d;
  d.cfg_ = cfg;
  Rng rng(seed);
  nn::ParamStore& ps = d.params_;
  int w = cfg.base_width, e = cfg.embed_dim, cin = cfg.channels;

  auto add_conv = [&](const std::string& name, int oc, int ic) {
    ps.add(name + ".w", nn::conv_init(rng, oc, ic, 3, 3));
    ps.add(name + ".b", Tensor::zeros({oc}));
  };
  auto add_lin = [&](const std::string& name, int out, int in) {
    ps.add(name + ".w", nn::linear_init(rng, out, in));
    ps.add(name + ".b", Tensor::zeros({out}));
  };
  auto add_rb = [&](const std::string& name, int ch) {
    add_lin(name + ".tproj", ch, e);
    add_conv(name + ".c1", ch, ch);
    add_conv(name + ".c2", ch, ch);
  };

  add_lin("temb.l1", e, 16);
  add_lin("temb.l2", e, e);
  add_lin("cond", e, cfg.cond_dim);
  add_conv("stem", w, cin);
  add_rb("rb1", w);
  add_conv("down1", 2 * w, w);
  add_rb("rb2", 2 * w);
  add_conv("down2", 2 * w, 2 * w);
  add_rb("rbm", 2 * w);
  add_conv("up2", 2 * w, 2 * w);
  add_rb("rb3", 2 * w);
  add_conv("up1", w, 2 * w);
  add_rb("rb4", w);
  // zero-init head: the untrained model predicts zero noise
  ps.add("head.w", Tensor::zeros({cin, w, 3, 3}));
  ps.add("head.b", Tensor::zeros({cin}));
  return d;
}

ad::Var Denoiser::forward(Tape& tape, const nn::WeightProvider& weights, Var z,
                          double log_snr, Var cond_embedding) const {
  Ctx ctx{tape, weights};
  Var tf = tape.constant(time_features(log_snr));
  Var ht = lin(ctx, ad::silu(tape, lin(ctx, tf, "temb.l1")), "temb.l2");
  Var hc = lin(ctx, cond_embedding, "cond");
  Var tc = ad::silu(tape, ad::add(tape, ht, hc));

  Var x0 = conv(ctx, z, "stem", 1);
  Var x1 = resblock(ctx, x0, tc, "rb1");
  Var d1 = conv(ctx, x1, "down1", 2);
  Var x2 = resblock(ctx, d1, tc, "rb2");
  Var d2 = conv(ctx, x2, "down2", 2);
  Var m = resblock(ctx, d2, tc, "rbm");
  Var u2 = conv(ctx, ad::upsample2x(tape, m), "up2", 1);
  Var x3 = resblock(ctx, ad::add(tape, u2, x2), tc, "rb3");
  Var u1 = conv(ctx, ad::upsample2x(tape, x3), "up1", 1);
  Var x4 = resblock(ctx, ad::add(tape, u1, x1), tc, "rb4");
  return conv(ctx, x4, "head", 1);
}

ad::Var Denoiser::forward(Tape& tape, const nn::WeightProvider& weights, Var z,
                          double log_snr, const Conditioning& cond) const {
  return forward(tape, weights, z, log_snr, tape.constant(cond.embedding));
}

Tensor Denoiser::predict(const Tensor& z, int t, const NoiseSchedule& sched,
                         const Conditioning& cond) const {
  Tape tape;
  nn::WeightProvider w = nn::constant_provider(tape, params_);
  Var out = forward(tape, w, tape.constant(z), sched.log_snr(t), cond);
  return tape.value(out);
}

nn::WeightProvider lora_provider(Tape& tape, const nn::ParamStore& base,
                                 const LoRAAdapter& adapter, bool train_adapter,
                                 std::shared_ptr<nn::Binding> binding) {
  if (!binding) binding = std::make_shared<nn::Binding>();
  binding->tape = &tape;
  auto cache = std::make_shared<std::map<std::string, Var>>();
  const LoRAAdapter* ad_ptr = &adapter;
  return nn::WeightProvider([&tape, &base, ad_ptr, train_adapter, binding,
                             cache](const std::string& name) {
    auto it = cache->find(name);
    if (it != cache->end()) return it->second;
    Var out;
    const Tensor& w = base.at(name);
    if (ad_ptr->adapts(name)) {
      const LoRAAdapter::Layer& l = ad_ptr->layers().at(name);
      Var a = tape.leaf(l.a, train_adapter);
      Var b = tape.leaf(l.b, train_adapter);
      if (train_adapter) {
        binding->vars.emplace(name + ".lora_a", a);
        binding->vars.emplace(name + ".lora_b", b);
      }
      Var delta = ad::scale(tape, ad::matmul(tape, b, a), ad_ptr->scale());
      if (w.ndim() != 2) delta = ad::reshape(tape, delta, w.shape());
      out = ad::add(tape, tape.constant(w), delta);
    } else {
      out = tape.constant(w);
    }
    cache->emplace(name, out);
    return out;
  });
}

AdaptedDenoiser::AdaptedDenoiser(const Denoiser& base, const LoRAAdapter* adapter)
    : base_(&base), adapter_(adapter) {
  if (adapter_) merged_ = adapter_->merged_into(base.params());
}

Tensor AdaptedDenoiser::predict(const Tensor& z, int t,
                                const NoiseSchedule& sched,
                                const Conditioning& cond) const {
  Tape tape;
  nn::WeightProvider w = nn::constant_provider(tape, effective_params());
  Var out = base_->forward(tape, w, tape.constant(z), sched.log_snr(t), cond);
  return tape.value(out);
}

ad::Var AdaptedDenoiser::forward_const_weights(Tape& tape, Var z, double log_snr,
                                               const Conditioning& cond) const {
  nn::WeightProvider w = nn::constant_provider(tape, effective_params());
  return base_->forward(tape, w, z, log_snr, cond);
}

ad::Var AdaptedDenoiser::forward_const_weights(Tape& tape, Var z, double log_snr,
                                               ad::Var cond_embedding) const {
  nn::WeightProvider w = nn::constant_provider(tape, effective_params());
  return base_->forward(tape, w, z, log_snr, cond_embedding);
}

}  // namespace apa
