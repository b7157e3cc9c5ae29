#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "apa/attack.hpp"
#include "apa/augment.hpp"
#include "apa/classifiers.hpp"
#include "apa/codec.hpp"
#include "apa/dataset.hpp"
#include "apa/denoiser.hpp"
#include "apa/diffusion.hpp"
#include "apa/vca.hpp"

namespace apa {

struct ScheduleConfig {
  int base_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
};

struct ZooMemberConfig {
  ClassifierArch arch = ClassifierArch::small_cnn_a;
  uint64_t seed = 0;
  int epochs = 30;
  int batch_size = 16;
  double lr = 3e-3;
};

struct ZooConfig {
  ZooMemberConfig substitute;
  std::vector<ZooMemberConfig> targets;
  double accuracy_gate = 0.9;
};

struct EvalConfig {
  int benchmark_size = 64;
  int probe_target = 0;  // which target supplies perceptual features
};

struct CodecConfig {
  Codec::Mode mode = Codec::Mode::identity;
  int epochs = 8;
  double lr = 1e-3;
};

struct AttackSection {
  // Mode-dependent trajectory length unless overridden.
  int T_sg = 50;
  int T_gc = 10;
  std::optional<int> T_override;
  int T_a = 10;
  int N = 10;
  double eps_a = 0.4;
  double mu = 0.04;
  double rho = 1.0;
  AttackConfig::Mode mode = AttackConfig::Mode::GC;
  AttackConfig::Target target = AttackConfig::Target::latent;
  bool dual_path = true;
  bool diffusion_aug = true;
  double one_stage_lambda = -1.0;  // < 0: two-stage
  bool use_vca = true;

  int effective_T() const {
    if (T_override) return *T_override;
    return mode == AttackConfig::Mode::SG ? T_sg : T_gc;
  }
  AttackConfig to_attack_config(uint64_t seed) const;
};

// Everything a run needs; a config hash uniquely identifies the run.
struct ExperimentConfig {
  uint64_t seed = 1;
  std::string out_dir = "out";
  int workers = 2;
  DatasetSpec dataset;
  CodecConfig codec;
  ScheduleConfig schedule;
  DenoiserConfig denoiser;            // channels/height/width synced to dataset
  DenoiserTrainConfig denoiser_train;
  VcaConfig vca;
  AttackSection attack;
  AugmentSpec augment;
  ZooConfig zoo;
  EvalConfig eval;

  static ExperimentConfig defaults();
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  nlohmann::json to_json() const;  // canonical: all keys, defaults filled
  void validate() const;

  std::string config_hash() const;   // whole config
  std::string prepare_hash() const;  // dataset+codec+schedule+denoiser+zoo+seed
  std::string vca_hash() const;      // prepare + vca section
};

}  // namespace apa
