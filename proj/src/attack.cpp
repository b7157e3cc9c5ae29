#include "apa/attack.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "apa/errors.hpp"

namespace apa {

using ad::Tape;
using ad::Var;

void AttackConfig::validate() const {
  if (T < 1) throw std::invalid_argument("AttackConfig: T must be >= 1");
  if (T_a < 0 || T_a > T)
    throw std::invalid_argument("AttackConfig: need 0 <= T_a <= T");
  if (N < 0) throw std::invalid_argument("AttackConfig: N must be >= 0");
  if (!(eps_a > 0.0)) throw std::invalid_argument("AttackConfig: eps_a must be > 0");
  if (!(mu > 0.0)) throw std::invalid_argument("AttackConfig: mu must be > 0");
  if (!(rho > 0.0)) throw std::invalid_argument("AttackConfig: rho must be > 0");
  if (target == Target::conditioning && mode == Mode::SG)
    throw std::invalid_argument(
        "AttackConfig: conditioning target requires gradient checkpointing "
        "(skip gradient lives in latent space)");
  if (diffusion_aug && T_a < 1)
    throw DegenerateConfig(
        "AttackConfig: diffusion augmentation with T_a = 0 collects nothing");
}

double attack_reward(const RewardModel& model, const Tensor& image) {
  if (!model.substitute) throw std::invalid_argument("attack_reward: no model");
  if (model.label < 0 || model.label >= model.substitute->spec().num_classes)
    throw std::invalid_argument("attack_reward: label out of class range");
  if (!image.all_finite())
    throw std::invalid_argument("attack_reward: non-finite image");
  Tape t;
  Var loss = ad::softmax_cross_entropy(
      t, model.substitute->logits(t, t.constant(image)), model.label);
  return t.value(loss)[0];
}

namespace {

Tensor sign_of(const Tensor& t) {
  Tensor s(t.shape());
  for (int64_t i = 0; i < t.numel(); ++i)
    s[i] = t[i] > 0.0 ? 1.0 : (t[i] < 0.0 ? -1.0 : 0.0);
  return s;
}

uint64_t aug_invocation(int iteration, int t) {
  return static_cast<uint64_t>(iteration) * 1024ull + static_cast<uint64_t>(t);
}

}  // namespace

Tensor guidance_interpolate(const Tensor& z0_clean, const Tensor& z0_pred,
                            int t, const NoiseSchedule& sched) {
  require_same_shape(z0_clean, z0_pred, "guidance_interpolate");
  double s = sched.sqrt_one_minus_ab(t);
  Tensor out(z0_clean.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = s * z0_clean[i] + (1.0 - s) * z0_pred[i];
  return out;
}

Tensor guided_denoise_hook(const Tensor& z_t, int t, const Tensor& eps_pred,
                           GuidanceState& state) {
  const NoiseSchedule& sched = *state.sched;
  double s = sched.sqrt_one_minus_ab(t);

  // Classifier gradient w.r.t. z_t through the z0 prediction and the
  // interpolated input; eps_pred is treated as the current constant
  // prediction, not re-differentiated through the denoiser.
  Tape tape;
  Var vz = tape.leaf(z_t, true);
  Var veps = tape.constant(eps_pred);
  Var z0t = tape_ops::predict_z0(tape, vz, t, veps, sched);
  Var z_in = ad::lincomb(tape, s, tape.constant(state.z0_clean), 1.0 - s, z0t);
  Var x_in = state.codec->decode(tape, z_in);
  Var loss = ad::softmax_cross_entropy(
      tape, state.reward_model->substitute->logits(tape, x_in),
      state.reward_model->label);
  tape.backward(loss);
  Tensor g_st = tape.grad(vz);

  double l1 = g_st.l1_norm();
  if (l1 == 0.0) {
    if (state.warnings)
      state.warnings->push_back("guidance: zero step gradient at t=" +
                                std::to_string(t) + "; eps unchanged");
    state.applied_adjustments[t] = Tensor::zeros(eps_pred.shape());
    return eps_pred;
  }
  if (state.m_st.empty()) state.m_st = Tensor::zeros(z_t.shape());
  for (int64_t i = 0; i < g_st.numel(); ++i) state.m_st[i] += g_st[i] / l1;

  Tensor adjustment = sign_of(state.m_st);
  adjustment *= s;
  state.applied_adjustments[t] = adjustment;
  Tensor out = eps_pred;
  out -= adjustment;
  return out;
}

namespace {

// Shared objective builder: mean attack reward over the mixed-and-augmented
// per-step outputs plus the plain final image, optionally minus the
// single-stage visual penalty. Used by the reward tape and by the
// full-graph reference so both differentiate the identical expression.
Var build_objective(Tape& tape, const TrajectoryContext& ctx,
                    const AttackConfig& cfg, int iteration,
                    const std::vector<int>& ts, const std::vector<Var>& z0_vars,
                    Var vzbar) {
  const Classifier& cls = *ctx.reward_model->substitute;
  int label = ctx.reward_model->label;
  std::vector<Var> terms;
  Var xbar = ctx.codec->decode(tape, vzbar);
  if (cfg.diffusion_aug) {
    if (z0_vars.empty())
      throw DegenerateConfig(
          "augmented trajectory reward: empty z0 collection (T_a = 0)");
    for (size_t i = 0; i < z0_vars.size(); ++i) {
      Var x0 = ctx.codec->decode(tape, z0_vars[i]);
      Var mixed = ad::scale(tape, ad::add(tape, x0, xbar), 0.5);
      Var augd = augment_apply(tape, *ctx.augment, mixed,
                               aug_invocation(iteration, ts[i]));
      terms.push_back(
          ad::softmax_cross_entropy(tape, cls.logits(tape, augd), label));
    }
  }
  terms.push_back(ad::softmax_cross_entropy(tape, cls.logits(tape, xbar), label));
  Var obj = ad::mean_scalars(tape, terms);
  if (cfg.one_stage_lambda > 0.0) {
    Var pen = ad::l2_norm(tape, ad::sub(tape, tape.constant(ctx.z0_clean), vzbar));
    obj = ad::sub(tape, obj, ad::scale(tape, pen, cfg.one_stage_lambda));
  }
  return obj;
}

Conditioning trajectory_conditioning(const TrajectoryContext& ctx,
                                     const AttackConfig& cfg,
                                     const Tensor& variable) {
  if (cfg.target == AttackConfig::Target::conditioning)
    return Conditioning::free_of(variable);
  return ctx.base_cond;
}

}  // namespace

TrajectoryComputation evaluate_trajectory(const TrajectoryContext& ctx,
                                          const Tensor& variable,
                                          const AttackConfig& cfg, int iteration,
                                          std::vector<std::string>* warnings) {
  const NoiseSchedule& sched = *ctx.sched;
  if (sched.total_steps() != cfg.T)
    throw std::invalid_argument("evaluate_trajectory: schedule length != cfg.T");

  TrajectoryComputation comp;
  comp.iteration = iteration;
  comp.variable_used = variable;
  Tensor z = cfg.target == AttackConfig::Target::latent ? variable : ctx.anchor_z_T;
  Conditioning cond = trajectory_conditioning(ctx, cfg, variable);

  GuidanceState gs;
  gs.reward_model = ctx.reward_model;
  gs.codec = ctx.codec;
  gs.sched = &sched;
  gs.z0_clean = ctx.z0_clean;
  gs.warnings = warnings;

  comp.latents.assign(cfg.T + 1, Tensor());
  comp.latents[cfg.T] = z;
  for (int t = cfg.T; t >= 1; --t) {
    Tensor eps = ctx.den->predict(z, t, sched, cond);
    if (cfg.dual_path && t <= cfg.T_a)
      eps = guided_denoise_hook(z, t, eps, gs);
    Tensor z0t = predict_z0(z, t, eps, sched);
    if (cfg.diffusion_aug && t <= cfg.T_a) {
      comp.collected_ts.push_back(t);
      comp.collected_z0.push_back(z0t);
    }
    z = denoise_step(z, t, eps, sched);
    if (!z.all_finite())
      throw NumericalFailure("evaluate_trajectory: non-finite latent at step " +
                             std::to_string(t));
    comp.latents[t - 1] = z;
  }
  comp.adjustments = std::move(gs.applied_adjustments);
  comp.z_bar0 = z;
  comp.x_final = ctx.codec->decode(z);
  comp.whitebox_reward = attack_reward(*ctx.reward_model, comp.x_final);

  // Reward tape over the collected predictions and the final latent.
  Tape tape;
  std::vector<Var> z0_vars;
  for (const Tensor& z0 : comp.collected_z0) z0_vars.push_back(tape.leaf(z0, true));
  Var vzbar = tape.leaf(comp.z_bar0, true);
  Var obj = build_objective(tape, ctx, cfg, iteration, comp.collected_ts,
                            z0_vars, vzbar);
  comp.objective = tape.value(obj)[0];
  tape.backward(obj);
  for (Var v : z0_vars) comp.d_collected.push_back(tape.grad(v));
  comp.d_zbar0 = tape.grad(vzbar);
  return comp;
}

TrajectoryRewardResult augmented_trajectory_reward(
    const Tensor& z_T, const AdaptedDenoiser& den, const Conditioning& cond,
    const RewardModel& model, const NoiseSchedule& sched, const Codec& codec,
    const AugmentSpec& augment, const AttackConfig& cfg, int iteration) {
  TrajectoryContext ctx;
  ctx.den = &den;
  ctx.reward_model = &model;
  ctx.sched = &sched;
  ctx.codec = &codec;
  ctx.augment = &augment;
  ctx.base_cond = cond;
  ctx.z0_clean = Tensor::zeros(z_T.shape());  // penalty unused here
  ctx.anchor_z_T = z_T;
  TrajectoryComputation comp = evaluate_trajectory(ctx, z_T, cfg, iteration, nullptr);
  return {comp.objective, comp.z_bar0, comp.collected_z0};
}

Tensor trajectory_gradient(const TrajectoryContext& ctx,
                           const TrajectoryComputation& comp,
                           const AttackConfig& cfg) {
  const NoiseSchedule& sched = *ctx.sched;
  if (cfg.mode == AttackConfig::Mode::SG) {
    Tensor g = comp.d_zbar0;
    g *= cfg.rho;
    if (!g.all_finite())
      throw NumericalFailure("trajectory_gradient: non-finite skip gradient");
    return g;
  }

  // Gradient checkpointing: walk the stored per-step latents backward,
  // recomputing each step's graph and chaining vector-Jacobian products.
  bool cond_target = cfg.target == AttackConfig::Target::conditioning;
  Tensor adjoint = comp.d_zbar0;
  Tensor cond_grad;
  const Tensor& cond_emb =
      cond_target ? comp.variable_used : ctx.base_cond.embedding;
  if (cond_target) cond_grad = Tensor::zeros(cond_emb.shape());

  for (int t = 1; t <= cfg.T; ++t) {
    Tape tape;
    Var vz = tape.leaf(comp.latents[t], true);
    Var vc = tape.leaf(cond_emb, cond_target);
    Var eps = ctx.den->forward_const_weights(tape, vz, sched.log_snr(t), vc);
    auto adj_it = comp.adjustments.find(t);
    if (adj_it != comp.adjustments.end())
      eps = ad::sub(tape, eps, tape.constant(adj_it->second));
    Var z_prev = tape_ops::denoise_step(tape, vz, t, eps, sched);
    Var seed = ad::sum(tape, ad::mul(tape, z_prev, tape.constant(adjoint)));
    for (size_t i = 0; i < comp.collected_ts.size(); ++i) {
      if (comp.collected_ts[i] != t) continue;
      Var z0t = tape_ops::predict_z0(tape, vz, t, eps, sched);
      seed = ad::add(tape, seed,
                     ad::sum(tape, ad::mul(tape, z0t,
                                           tape.constant(comp.d_collected[i]))));
    }
    tape.backward(seed);
    adjoint = tape.grad(vz);
    if (cond_target) {
      Tensor gc = tape.grad(vc);
      cond_grad += gc;
    }
  }
  Tensor out = cond_target ? cond_grad : adjoint;
  if (!out.all_finite())
    throw NumericalFailure("trajectory_gradient: non-finite checkpointed gradient");
  return out;
}

Tensor full_graph_trajectory_gradient(const TrajectoryContext& ctx,
                                      const Tensor& variable,
                                      const AttackConfig& cfg, int iteration) {
  if (cfg.mode == AttackConfig::Mode::SG)
    throw std::invalid_argument(
        "full_graph_trajectory_gradient: reference applies to GC only");
  const NoiseSchedule& sched = *ctx.sched;
  bool cond_target = cfg.target == AttackConfig::Target::conditioning;
  Tape tape;
  Var leaf = tape.leaf(variable, true);
  Var vz = cond_target ? tape.constant(ctx.anchor_z_T) : leaf;
  Var vc = cond_target ? leaf : tape.constant(ctx.base_cond.embedding);

  GuidanceState gs;
  gs.reward_model = ctx.reward_model;
  gs.codec = ctx.codec;
  gs.sched = &sched;
  gs.z0_clean = ctx.z0_clean;

  std::vector<int> ts;
  std::vector<Var> z0_vars;
  for (int t = cfg.T; t >= 1; --t) {
    Var eps = ctx.den->forward_const_weights(tape, vz, sched.log_snr(t), vc);
    if (cfg.dual_path && t <= cfg.T_a) {
      guided_denoise_hook(tape.value(vz), t, tape.value(eps), gs);
      eps = ad::sub(tape, eps, tape.constant(gs.applied_adjustments.at(t)));
    }
    if (cfg.diffusion_aug && t <= cfg.T_a) {
      ts.push_back(t);
      z0_vars.push_back(tape_ops::predict_z0(tape, vz, t, eps, sched));
    }
    vz = tape_ops::denoise_step(tape, vz, t, eps, sched);
  }
  Var obj = build_objective(tape, ctx, cfg, iteration, ts, z0_vars, vz);
  tape.backward(obj);
  return tape.grad(leaf);
}

void trajectory_update(AttackState& state, const Tensor& g_tr,
                       const AttackConfig& cfg) {
  require_same_shape(state.variable, g_tr, "trajectory_update");
  double l1 = g_tr.l1_norm();
  if (l1 == 0.0) {
    state.warnings.push_back(
        "trajectory_update: zero gradient; momentum and variable unchanged");
    return;
  }
  if (state.momentum.m_tr.empty())
    state.momentum.m_tr = Tensor::zeros(state.variable.shape());
  Tensor& m = state.momentum.m_tr;
  for (int64_t i = 0; i < m.numel(); ++i) m[i] += g_tr[i] / l1;
  for (int64_t i = 0; i < state.variable.numel(); ++i) {
    double step = m[i] > 0.0 ? cfg.mu : (m[i] < 0.0 ? -cfg.mu : 0.0);
    double lo = state.anchor[i] - cfg.eps_a;
    double hi = state.anchor[i] + cfg.eps_a;
    state.variable[i] = std::clamp(state.variable[i] + step, lo, hi);
  }
  ++state.momentum.iteration;
}

AttackResult run_attack(const Tensor& image, int label, const Denoiser& den,
                        const LoRAAdapter* adapter, const RewardModel& model,
                        const AttackConfig& cfg, const Conditioning& cond,
                        const NoiseSchedule& sched, const Codec& codec,
                        const AugmentSpec& augment) {
  cfg.validate();
  if (sched.total_steps() != cfg.T)
    throw std::invalid_argument("run_attack: schedule length != cfg.T");

  AdaptedDenoiser aden(den, adapter);
  AttackResult res;
  AttackState state;
  try {
    Tensor z0_clean = codec.encode(image);
    InversionResult inv = full_inversion(image, aden, cond, sched, codec);

    TrajectoryContext ctx;
    ctx.den = &aden;
    ctx.reward_model = &model;
    ctx.sched = &sched;
    ctx.codec = &codec;
    ctx.augment = &augment;
    ctx.base_cond = cond;
    ctx.z0_clean = z0_clean;
    ctx.anchor_z_T = inv.z_T;

    state.anchor = cfg.target == AttackConfig::Target::latent ? inv.z_T
                                                              : cond.embedding;
    state.variable = state.anchor;
    state.momentum.m_tr = Tensor::zeros(state.anchor.shape());

    auto consider = [&](double reward, const Tensor& img) {
      if (!state.best_image.empty() && reward <= state.best_reward) return;
      state.best_reward = reward;
      state.best_image = img;
    };

    for (int i = 1; i <= cfg.N; ++i) {
      TrajectoryComputation comp =
          evaluate_trajectory(ctx, state.variable, cfg, i, &state.warnings);
      res.objective_per_iteration.push_back(comp.objective);
      res.whitebox_per_iteration.push_back(comp.whitebox_reward);
      consider(comp.whitebox_reward, comp.x_final);
      Tensor g = trajectory_gradient(ctx, comp, cfg);
      trajectory_update(state, g, cfg);
    }

    // Final generation at the updated variable. With N = 0 this is the
    // plain reconstruction (no guidance).
    if (cfg.N == 0) {
      DenoiseResult dn = full_denoise(inv.z_T, aden, cond, sched, codec);
      double r = attack_reward(model, dn.x_out);
      res.whitebox_per_iteration.push_back(r);
      consider(r, dn.x_out);
    } else {
      TrajectoryComputation comp = evaluate_trajectory(
          ctx, state.variable, cfg, cfg.N + 1, &state.warnings);
      res.whitebox_per_iteration.push_back(comp.whitebox_reward);
      consider(comp.whitebox_reward, comp.x_final);
    }

    res.x_adv = state.best_image;
    res.variable_final = state.variable;
    res.whitebox_success = model.substitute->predict_class(res.x_adv) != label;
  } catch (const std::exception& e) {
    res.failed = true;
    res.error = e.what();
  }
  res.warnings = state.warnings;
  return res;
}

AttackResult one_stage_baseline(const Tensor& image, int label,
                                const Denoiser& den, const RewardModel& model,
                                AttackConfig cfg, double lambda,
                                const Conditioning& cond,
                                const NoiseSchedule& sched, const Codec& codec,
                                const AugmentSpec& augment) {
  if (lambda < 0.0)
    throw std::invalid_argument("one_stage_baseline: lambda must be >= 0");
  cfg.one_stage_lambda = lambda;
  return run_attack(image, label, den, nullptr, model, cfg, cond, sched, codec,
                    augment);
}

}  // namespace apa
