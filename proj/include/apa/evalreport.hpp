#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "apa/attack.hpp"

namespace apa {

struct PerImageRecord {
  std::string id;
  int label = -1;
  std::map<std::string, int> predictions;  // model name -> argmax class
  double ssim = 0.0;
  double perceptual = 0.0;
  bool whitebox_flag = false;  // substitute fooled on this image
};

// Per-model ASR plus visual-consistency aggregates; every aggregate is
// recomputable from the per-image records.
struct EvalReport {
  std::string config_hash;
  std::string run_id;
  std::vector<std::string> model_names;  // "substitute" first, then targets
  std::map<std::string, double> asr_per_model;
  double mean_ssim = 0.0;
  double mean_perceptual = 0.0;
  double blackbox_asr = 0.0;  // mean over non-substitute models
  std::vector<PerImageRecord> records;

  void recompute_aggregates();
  void check_consistency() const;  // aggregates == recomputation

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  std::string text_table() const;
  std::string csv() const;
};

struct AblationFlags {
  bool dual_path = true;
  bool diffusion_aug = true;
  AttackConfig::Mode mode = AttackConfig::Mode::SG;
  AttackConfig::Target target = AttackConfig::Target::latent;

  std::string name() const;
};

struct AblationCell {
  AblationFlags flags;
  double whitebox_asr = 0.0;
  double blackbox_asr = 0.0;
  bool failed = false;
  std::string error;
};

nlohmann::json ablation_to_json(const std::vector<AblationCell>& cells);
std::string ablation_table(const std::vector<AblationCell>& cells);

}  // namespace apa
