#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "apa/augment.hpp"
#include "apa/classifiers.hpp"
#include "apa/diffusion.hpp"
#include "apa/vca.hpp"

namespace apa {

struct AttackConfig {
  int T = 10;      // trajectory steps (the schedule passed in must match)
  int T_a = 10;    // guided steps (final T_a of the trajectory)
  int N = 10;      // attack iterations
  double eps_a = 0.4;
  double mu = 0.04;
  enum class Mode { SG, GC } mode = Mode::GC;
  enum class Target { latent, conditioning } target = Target::latent;
  double rho = 1.0;              // skip-gradient scale
  bool dual_path = true;         // step-level guidance
  bool diffusion_aug = true;     // per-step output mixing + augmentation
  double one_stage_lambda = -1;  // >= 0: penalized single-stage reward
  uint64_t seed = 0;

  void validate() const;
};

struct MomentumState {
  Tensor m_tr;  // matches the optimization variable
  Tensor m_st;  // matches the latent; reset at each trajectory start
  int iteration = 0;
};

struct AttackState {
  Tensor anchor;    // z_T^0 or the anchor conditioning embedding
  Tensor variable;  // current optimization variable
  MomentumState momentum;
  double best_reward = -1.0;
  Tensor best_image;
  std::vector<std::string> warnings;
};

struct RewardModel {
  const Classifier* substitute = nullptr;
  int label = -1;
};

// Cross-entropy of the substitute on `image` against the true label.
double attack_reward(const RewardModel& model, const Tensor& image);

// Mutable context threaded through the guided denoising steps.
struct GuidanceState {
  const RewardModel* reward_model = nullptr;
  const Codec* codec = nullptr;
  const NoiseSchedule* sched = nullptr;
  Tensor z0_clean;  // latent of the clean input (Eq. interp anchor)
  Tensor m_st;
  std::map<int, Tensor> applied_adjustments;  // t -> subtracted tensor
  std::vector<std::string>* warnings = nullptr;
};

// sqrt(1-ab_t)*z0_clean + (1-sqrt(1-ab_t))*z0_pred: the classifier input
// becomes progressively cleaner as t decreases.
Tensor guidance_interpolate(const Tensor& z0_clean, const Tensor& z0_pred,
                            int t, const NoiseSchedule& sched);

// Step-level guidance: predicts z0 from the current step, interpolates it
// with the clean latent, pushes the classifier gradient into the step
// momentum and tilts eps_pred by -sqrt(1-ab_t)*sgn(m_st).
Tensor guided_denoise_hook(const Tensor& z_t, int t, const Tensor& eps_pred,
                           GuidanceState& state);

// Everything one iteration's forward pass produces.
struct TrajectoryComputation {
  double objective = 0.0;        // optimized reward (augmented mean, possibly penalized)
  double whitebox_reward = 0.0;  // plain R_a(decode(z_bar0))
  Tensor z_bar0;
  Tensor x_final;
  std::vector<Tensor> latents;       // latents[t] = z_t entering step t (index 0 = z_bar0)
  std::vector<int> collected_ts;     // steps whose z0 predictions feed the reward
  std::vector<Tensor> collected_z0;  // aligned with collected_ts
  std::map<int, Tensor> adjustments; // guidance tensors actually applied
  // reward-tape gradients
  std::vector<Tensor> d_collected;   // dR/d z0^t, aligned with collected_ts
  Tensor d_zbar0;                    // dR/d z_bar0
  Tensor variable_used;              // optimization variable of this pass
  int iteration = 0;
};

struct TrajectoryContext {
  const AdaptedDenoiser* den = nullptr;
  const RewardModel* reward_model = nullptr;
  const NoiseSchedule* sched = nullptr;
  const Codec* codec = nullptr;
  const AugmentSpec* augment = nullptr;
  Conditioning base_cond;
  Tensor z0_clean;
  Tensor anchor_z_T;  // fixed z_T in conditioning-target mode
};

// Forward trajectory + reward tape (gradients w.r.t. the collected z0 list
// and z_bar0). `variable` is z_T in latent mode, the embedding otherwise.
TrajectoryComputation evaluate_trajectory(const TrajectoryContext& ctx,
                                          const Tensor& variable,
                                          const AttackConfig& cfg, int iteration,
                                          std::vector<std::string>* warnings);

// Spec-level convenience: one guided trajectory from z_T with gradients off.
struct TrajectoryRewardResult {
  double reward;
  Tensor z_bar0;
  std::vector<Tensor> collected_z0;
};
TrajectoryRewardResult augmented_trajectory_reward(
    const Tensor& z_T, const AdaptedDenoiser& den, const Conditioning& cond,
    const RewardModel& model, const NoiseSchedule& sched, const Codec& codec,
    const AugmentSpec& augment, const AttackConfig& cfg, int iteration = 1);

// SG: rho * dR/d(z_bar0) re-addressed to the variable. GC: exact gradient of
// the objective w.r.t. the variable, computed by per-step recomputation.
Tensor trajectory_gradient(const TrajectoryContext& ctx,
                           const TrajectoryComputation& comp,
                           const AttackConfig& cfg);

// Reference implementation for tests: one monolithic tape across all steps.
Tensor full_graph_trajectory_gradient(const TrajectoryContext& ctx,
                                      const Tensor& variable,
                                      const AttackConfig& cfg, int iteration);

// Momentum-sign ascent with L-inf projection onto the eps_a ball.
void trajectory_update(AttackState& state, const Tensor& g_tr,
                       const AttackConfig& cfg);

struct AttackResult {
  Tensor x_adv;
  Tensor variable_final;
  std::vector<double> objective_per_iteration;  // N values
  std::vector<double> whitebox_per_iteration;   // N+1 values (final appended)
  bool whitebox_success = false;
  std::vector<std::string> warnings;
  bool failed = false;       // partial progress recorded on failure
  std::string error;
};

AttackResult run_attack(const Tensor& image, int label, const Denoiser& den,
                        const LoRAAdapter* adapter, const RewardModel& model,
                        const AttackConfig& cfg, const Conditioning& cond,
                        const NoiseSchedule& sched, const Codec& codec,
                        const AugmentSpec& augment);

// Single-stage ablation: same loop, penalized reward, no adapter.
AttackResult one_stage_baseline(const Tensor& image, int label,
                                const Denoiser& den, const RewardModel& model,
                                AttackConfig cfg, double lambda,
                                const Conditioning& cond,
                                const NoiseSchedule& sched, const Codec& codec,
                                const AugmentSpec& augment);

}  // namespace apa
