#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "apa/attack.hpp"
#include "apa/errors.hpp"
#include "support/testutil.hpp"
#include "support/tinyworld.hpp"

using namespace apa;
using testutil::tiny_world;

namespace {

// Bundles the per-test references the TrajectoryContext points into.
struct CtxBundle {
  const testutil::TinyWorld& w;
  AdaptedDenoiser den;
  NoiseSchedule sched;
  RewardModel model;
  Tensor image;
  Tensor z0_clean;
  InversionResult inv;
  TrajectoryContext ctx;

  explicit CtxBundle(int label, const LoRAAdapter* adapter = nullptr, int T = 4)
      : w(tiny_world()),
        den(w.denoiser, adapter),
        sched(NoiseSchedule::linear_beta(T)) {
    image = w.data.eval_x.at(label);
    model.substitute = &w.substitute;
    model.label = w.data.eval_y.at(label);
    z0_clean = w.codec.encode(image);
    inv = full_inversion(image, den, w.cond, sched, w.codec);
    ctx.den = &den;
    ctx.reward_model = &model;
    ctx.sched = &sched;
    ctx.codec = &w.codec;
    ctx.augment = &w.augment;
    ctx.base_cond = w.cond;
    ctx.z0_clean = z0_clean;
    ctx.anchor_z_T = inv.z_T;
  }
};

AttackConfig gc_config(int T, bool dual, bool aug) {
  AttackConfig cfg;
  cfg.T = T;
  cfg.T_a = std::min(T, 3);
  cfg.N = 2;
  cfg.mode = AttackConfig::Mode::GC;
  cfg.dual_path = dual;
  cfg.diffusion_aug = aug;
  cfg.seed = 17;
  return cfg;
}

}  // namespace

TEST_CASE("attack_reward equals cross entropy of the substitute") {
  const auto& w = tiny_world();
  RewardModel model{&w.substitute, 2};
  Tensor x = w.data.eval_x.at(2);
  Tensor logits = w.substitute.predict_logits(x);
  double mx = logits[0];
  for (int i = 1; i < 4; ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (int i = 0; i < 4; ++i) z += std::exp(logits[i] - mx);
  double want = mx + std::log(z) - logits[2];
  CHECK(attack_reward(model, x) == doctest::Approx(want).epsilon(1e-12));
  CHECK(attack_reward(model, x) >= 0.0);

  RewardModel bad{&w.substitute, 7};
  CHECK_THROWS_AS(attack_reward(bad, x), std::invalid_argument);
}

TEST_CASE("uniform and perfect-confidence rewards") {
  // zeroed readout -> uniform logits -> CE = ln K
  ClassifierSpec spec;
  spec.arch = ClassifierArch::small_cnn_a;
  spec.seed = 12;
  Classifier c = Classifier::init(spec, 1, 8, 8);
  c.params().at("fc.w") = Tensor::zeros(c.params().at("fc.w").shape());
  c.params().at("fc.b") = Tensor::zeros({4});
  RewardModel model{&c, 1};
  Tensor x = Tensor::full({1, 8, 8}, 0.5);
  CHECK(attack_reward(model, x) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // huge bias on the true class -> probability ~1 -> CE ~0
  c.params().at("fc.b")[1] = 50.0;
  CHECK(attack_reward(model, x) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("guidance interpolation endpoints and scalar oracle") {
  // ab = 0.75 -> sqrt(1-ab) = 0.5; z0_clean=0, z0_pred=2 -> 1.0
  NoiseSchedule s(1, {1.0, 0.75});
  Tensor zc = Tensor::scalar(0.0), zp = Tensor::scalar(2.0);
  CHECK(guidance_interpolate(zc, zp, 1, s)[0] == doctest::Approx(1.0));

  // ab -> 1: z_in -> z0_pred ; ab -> 0: z_in -> z0_clean
  NoiseSchedule hi(1, {1.0, 1.0 - 1e-14});
  CHECK(guidance_interpolate(zc, zp, 1, hi)[0] == doctest::Approx(2.0).epsilon(1e-6));
  NoiseSchedule lo(1, {1.0, 1e-14});
  CHECK(guidance_interpolate(zc, zp, 1, lo)[0] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("guided hook: near-zero coefficient leaves eps unchanged") {
  const auto& w = tiny_world();
  RewardModel model{&w.substitute, 0};
  NoiseSchedule s(1, {1.0, std::nextafter(1.0, 0.0)});
  GuidanceState gs;
  gs.reward_model = &model;
  gs.codec = &w.codec;
  gs.sched = &s;
  gs.z0_clean = w.codec.encode(w.data.eval_x.at(0));
  Rng rng(3);
  Tensor z = rng.normal_tensor({1, 8, 8});
  Tensor eps = rng.normal_tensor({1, 8, 8});
  Tensor out = guided_denoise_hook(z, 1, eps, gs);
  for (int64_t i = 0; i < eps.numel(); ++i)
    CHECK(std::fabs(out[i] - eps[i]) < 2e-8);
}

TEST_CASE("guided hook: zero gradient skips momentum and returns eps as-is") {
  // constant-logit classifier: zero readout weights -> zero input gradient
  ClassifierSpec spec;
  spec.arch = ClassifierArch::small_cnn_a;
  spec.seed = 13;
  Classifier c = Classifier::init(spec, 1, 8, 8);
  c.params().at("fc.w") = Tensor::zeros(c.params().at("fc.w").shape());
  RewardModel model{&c, 0};
  const auto& w = tiny_world();
  GuidanceState gs;
  gs.reward_model = &model;
  gs.codec = &w.codec;
  gs.sched = &w.sched;
  gs.z0_clean = Tensor::zeros({1, 8, 8});
  std::vector<std::string> warnings;
  gs.warnings = &warnings;
  Rng rng(4);
  Tensor z = rng.normal_tensor({1, 8, 8});
  Tensor eps = rng.normal_tensor({1, 8, 8});
  Tensor out = guided_denoise_hook(z, 2, eps, gs);
  for (int64_t i = 0; i < eps.numel(); ++i) CHECK(out[i] == eps[i]);
  CHECK(gs.m_st.empty());
  CHECK(warnings.size() == 1);
}

TEST_CASE("hook accumulates momentum and applies sqrt(1-ab)*sign tilt") {
  CtxBundle b(0);
  const auto& w = b.w;
  GuidanceState gs;
  gs.reward_model = &b.model;
  gs.codec = &w.codec;
  gs.sched = &w.sched;
  gs.z0_clean = b.z0_clean;
  Rng rng(5);
  Tensor z = rng.normal_tensor({1, 8, 8});
  Tensor eps = rng.normal_tensor({1, 8, 8});
  int t = 2;
  Tensor out = guided_denoise_hook(z, t, eps, gs);
  REQUIRE(!gs.m_st.empty());
  double s = w.sched.sqrt_one_minus_ab(t);
  for (int64_t i = 0; i < eps.numel(); ++i) {
    double m = gs.m_st[i];
    double adj = s * (m > 0 ? 1.0 : (m < 0 ? -1.0 : 0.0));
    CHECK(out[i] == doctest::Approx(eps[i] - adj).epsilon(1e-12));
  }
  // second call on the same state accumulates (momentum norm grows)
  double l1_before = gs.m_st.l1_norm();
  guided_denoise_hook(z, 1, eps, gs);
  CHECK(gs.m_st.l1_norm() > l1_before - 1e-12);
}

TEST_CASE("trajectory_update: momentum, sign step, projection, zero gradient") {
  AttackConfig cfg;
  cfg.mu = 0.04;
  cfg.eps_a = 0.4;
  AttackState st;
  st.anchor = Tensor({2}, {0.0, 0.0});
  st.variable = st.anchor;
  st.momentum.m_tr = Tensor::zeros({2});

  trajectory_update(st, Tensor({2}, {2.0, -2.0}), cfg);
  CHECK(st.momentum.m_tr[0] == doctest::Approx(0.5));
  CHECK(st.momentum.m_tr[1] == doctest::Approx(-0.5));
  CHECK(st.variable[0] == doctest::Approx(0.04));
  CHECK(st.variable[1] == doctest::Approx(-0.04));
  CHECK(st.momentum.iteration == 1);

  // clamp: walk far past the ball, expect projection at 0.4
  for (int i = 0; i < 20; ++i)
    trajectory_update(st, Tensor({2}, {1.0, -1.0}), cfg);
  CHECK(st.variable[0] == doctest::Approx(0.4));
  CHECK(st.variable[1] == doctest::Approx(-0.4));

  // zero gradient: full state unchanged plus a warning
  Tensor m_before = st.momentum.m_tr;
  Tensor v_before = st.variable;
  int it_before = st.momentum.iteration;
  trajectory_update(st, Tensor::zeros({2}), cfg);
  CHECK(st.momentum.m_tr[0] == m_before[0]);
  CHECK(st.variable[0] == v_before[0]);
  CHECK(st.momentum.iteration == it_before);
  CHECK(st.warnings.size() == 1);
}

TEST_CASE("1000 randomized updates keep the projection and step-size invariants") {
  Rng rng(6);
  AttackConfig cfg;
  cfg.mu = 0.04;
  cfg.eps_a = 0.4;
  AttackState st;
  st.anchor = rng.normal_tensor({16});
  st.variable = st.anchor;
  st.momentum.m_tr = Tensor::zeros({16});
  for (int i = 0; i < 1000; ++i) {
    Tensor before = st.variable;
    Tensor g = rng.normal_tensor({16});
    if (i % 7 == 0) g = Tensor::zeros({16});
    trajectory_update(st, g, cfg);
    for (int64_t j = 0; j < 16; ++j) {
      CHECK(std::fabs(st.variable[j] - st.anchor[j]) <= cfg.eps_a + 1e-9);
      double step = st.variable[j] - before[j];
      bool clamped = std::fabs(std::fabs(st.variable[j] - st.anchor[j]) - cfg.eps_a) < 1e-12;
      if (!clamped) {
        bool ok = std::fabs(step) < 1e-15 || std::fabs(std::fabs(step) - cfg.mu) < 1e-12;
        CHECK(ok);
      }
    }
  }
}

TEST_CASE("skip gradient scales with rho but the first update direction does not") {
  CtxBundle b(1);
  AttackConfig cfg = gc_config(4, true, true);
  cfg.mode = AttackConfig::Mode::SG;
  TrajectoryComputation comp =
      evaluate_trajectory(b.ctx, b.inv.z_T, cfg, 1, nullptr);
  cfg.rho = 1.0;
  Tensor g1 = trajectory_gradient(b.ctx, comp, cfg);
  cfg.rho = 2.0;
  Tensor g2 = trajectory_gradient(b.ctx, comp, cfg);
  for (int64_t i = 0; i < g1.numel(); ++i)
    CHECK(g2[i] == doctest::Approx(2.0 * g1[i]).epsilon(1e-12));

  AttackState s1, s2;
  s1.anchor = s2.anchor = b.inv.z_T;
  s1.variable = s2.variable = b.inv.z_T;
  s1.momentum.m_tr = Tensor::zeros(b.inv.z_T.shape());
  s2.momentum.m_tr = Tensor::zeros(b.inv.z_T.shape());
  trajectory_update(s1, g1, cfg);
  trajectory_update(s2, g2, cfg);
  for (int64_t i = 0; i < s1.variable.numel(); ++i)
    CHECK(s1.variable[i] == s2.variable[i]);
}

TEST_CASE("checkpointed gradient equals the full-graph gradient (T=4)") {
  for (bool dual : {false, true}) {
    for (bool aug : {false, true}) {
      CtxBundle b(2);
      AttackConfig cfg = gc_config(4, dual, aug);
      TrajectoryComputation comp =
          evaluate_trajectory(b.ctx, b.inv.z_T, cfg, 1, nullptr);
      Tensor gc = trajectory_gradient(b.ctx, comp, cfg);
      Tensor full = full_graph_trajectory_gradient(b.ctx, b.inv.z_T, cfg, 1);
      REQUIRE(gc.shape() == full.shape());
      for (int64_t i = 0; i < gc.numel(); ++i) {
        double denom = std::max({std::fabs(gc[i]), std::fabs(full[i]), 1e-12});
        CHECK(std::fabs(gc[i] - full[i]) / denom < 1e-5);
      }
    }
  }
}

TEST_CASE("conditioning-target checkpointed gradient equals full graph") {
  CtxBundle b(3);
  AttackConfig cfg = gc_config(4, true, true);
  cfg.target = AttackConfig::Target::conditioning;
  Tensor emb = b.w.cond.embedding;
  TrajectoryComputation comp = evaluate_trajectory(b.ctx, emb, cfg, 1, nullptr);
  Tensor gc = trajectory_gradient(b.ctx, comp, cfg);
  Tensor full = full_graph_trajectory_gradient(b.ctx, emb, cfg, 1);
  REQUIRE(gc.shape() == full.shape());
  for (int64_t i = 0; i < gc.numel(); ++i) {
    double denom = std::max({std::fabs(gc[i]), std::fabs(full[i]), 1e-12});
    CHECK(std::fabs(gc[i] - full[i]) / denom < 1e-5);
  }
}

TEST_CASE("GC gradient matches central finite differences (smooth path)") {
  CtxBundle b(0, nullptr, 2);
  AttackConfig cfg = gc_config(2, false, true);  // guidance off: objective smooth
  cfg.T_a = 2;
  auto objective = [&](const Tensor& zT) {
    TrajectoryComputation c = evaluate_trajectory(b.ctx, zT, cfg, 1, nullptr);
    return c.objective;
  };
  TrajectoryComputation comp =
      evaluate_trajectory(b.ctx, b.inv.z_T, cfg, 1, nullptr);
  Tensor g = trajectory_gradient(b.ctx, comp, cfg);
  Rng pick(7);
  double worst = 0.0;
  for (int k = 0; k < 4; ++k) {
    int64_t coord = static_cast<int64_t>(pick.next_u64() % g.numel());
    double fd = testutil::central_diff(objective, b.inv.z_T, coord, 1e-5);
    double denom = std::max({std::fabs(fd), std::fabs(g[coord]), 1e-8});
    worst = std::max(worst, std::fabs(fd - g[coord]) / denom);
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("augmented reward: idempotent mix and arithmetic mean checks") {
  CtxBundle b(1);
  // identity augmentation
  AugmentSpec id;
  id.pad_max = 0;
  id.brightness_lo = 1.0;
  id.brightness_hi = 1.0;
  b.ctx.augment = &id;
  AttackConfig cfg = gc_config(4, false, true);
  TrajectoryRewardResult r = augmented_trajectory_reward(
      b.inv.z_T, b.den, b.w.cond, b.model, b.w.sched, b.w.codec, id, cfg);
  // all mixed images are (x0t + xbar)/2; if z0^t == zbar the reward equals
  // the plain reward of the final image. Verify the degenerate claim by
  // feeding the mean formula directly.
  double plain = attack_reward(b.model, b.w.codec.decode(r.z_bar0));
  double recomputed = 0.0;
  for (const Tensor& z0 : r.collected_z0) {
    Tensor mixed = b.w.codec.decode(z0);
    mixed += b.w.codec.decode(r.z_bar0);
    mixed *= 0.5;
    recomputed += attack_reward(b.model, mixed);
  }
  recomputed = (recomputed + plain) / (r.collected_z0.size() + 1.0);
  CHECK(r.reward == doctest::Approx(recomputed).epsilon(1e-10));

  // degenerate config: T_a = 0 with augmentation on
  AttackConfig bad = cfg;
  bad.T_a = 0;
  CHECK_THROWS_AS(bad.validate(), DegenerateConfig);
}

TEST_CASE("run_attack: N=0 yields the plain reconstruction; runs are deterministic") {
  CtxBundle b(2);
  AttackConfig cfg = gc_config(4, true, true);
  cfg.N = 0;
  AttackResult r0 =
      run_attack(b.image, b.model.label, b.w.denoiser, nullptr, b.model, cfg,
                 b.w.cond, b.w.sched, b.w.codec, b.w.augment);
  REQUIRE(!r0.failed);
  DenoiseResult recon = full_denoise(b.inv.z_T, b.den, b.w.cond, b.w.sched, b.w.codec);
  for (int64_t i = 0; i < recon.x_out.numel(); ++i)
    CHECK(r0.x_adv[i] == recon.x_out[i]);
  CHECK(r0.whitebox_per_iteration.size() == 1);

  cfg.N = 2;
  AttackResult a =
      run_attack(b.image, b.model.label, b.w.denoiser, nullptr, b.model, cfg,
                 b.w.cond, b.w.sched, b.w.codec, b.w.augment);
  AttackResult bres =
      run_attack(b.image, b.model.label, b.w.denoiser, nullptr, b.model, cfg,
                 b.w.cond, b.w.sched, b.w.codec, b.w.augment);
  REQUIRE(!a.failed);
  for (int64_t i = 0; i < a.x_adv.numel(); ++i) CHECK(a.x_adv[i] == bres.x_adv[i]);
  CHECK(a.whitebox_per_iteration == bres.whitebox_per_iteration);
  CHECK(a.whitebox_per_iteration.size() == 3);
  CHECK(a.objective_per_iteration.size() == 2);
}

TEST_CASE("momentum accounting: m_st resets per trajectory (repeat evaluation identical)") {
  CtxBundle b(0);
  AttackConfig cfg = gc_config(4, true, true);
  TrajectoryComputation c1 = evaluate_trajectory(b.ctx, b.inv.z_T, cfg, 1, nullptr);
  TrajectoryComputation c2 = evaluate_trajectory(b.ctx, b.inv.z_T, cfg, 1, nullptr);
  CHECK(c1.objective == c2.objective);
  for (const auto& [t, adj] : c1.adjustments) {
    const Tensor& other = c2.adjustments.at(t);
    for (int64_t i = 0; i < adj.numel(); ++i) CHECK(adj[i] == other[i]);
  }
}

TEST_CASE("one-stage baseline: lambda 0 equals no-adapter attack bitwise") {
  CtxBundle b(1);
  AttackConfig cfg = gc_config(4, true, true);
  cfg.N = 2;
  AttackResult plain =
      run_attack(b.image, b.model.label, b.w.denoiser, nullptr, b.model, cfg,
                 b.w.cond, b.w.sched, b.w.codec, b.w.augment);
  AttackResult one =
      one_stage_baseline(b.image, b.model.label, b.w.denoiser, b.model, cfg, 0.0,
                         b.w.cond, b.w.sched, b.w.codec, b.w.augment);
  REQUIRE(!plain.failed);
  REQUIRE(!one.failed);
  for (int64_t i = 0; i < plain.x_adv.numel(); ++i)
    CHECK(plain.x_adv[i] == one.x_adv[i]);
  CHECK(plain.objective_per_iteration == one.objective_per_iteration);
}

TEST_CASE("one-stage baseline: huge lambda pins z_bar0 to the clean latent") {
  CtxBundle b(2);
  AttackConfig cfg = gc_config(4, true, true);
  cfg.N = 3;
  auto final_gap = [&](double lambda) {
    AttackResult r =
        one_stage_baseline(b.image, b.model.label, b.w.denoiser, b.model, cfg,
                           lambda, b.w.cond, b.w.sched, b.w.codec, b.w.augment);
    REQUIRE(!r.failed);
    // regenerate at the final variable to measure ||z0 - zbar0||
    TrajectoryComputation c =
        evaluate_trajectory(b.ctx, r.variable_final, cfg, cfg.N + 1, nullptr);
    Tensor diff = c.z_bar0;
    diff -= b.z0_clean;
    return diff.l2_norm();
  };
  double gap0 = final_gap(0.0);
  double gap_big = final_gap(1e6);
  CHECK(gap_big < gap0);
}

TEST_CASE("config validation rejects malformed attack configs") {
  AttackConfig cfg;
  cfg.T = 4;
  cfg.T_a = 5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.T_a = 4;
  cfg.eps_a = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.eps_a = 0.4;
  cfg.mode = AttackConfig::Mode::SG;
  cfg.target = AttackConfig::Target::conditioning;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
