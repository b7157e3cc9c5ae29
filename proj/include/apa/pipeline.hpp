#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "apa/config.hpp"
#include "apa/evalreport.hpp"

namespace apa {

// Runs fn(0..n-1) on a bounded pool. Work items must not share mutable
// state; exceptions are collected and the first one is rethrown.
void parallel_for(int workers, int n, const std::function<void(int)>& fn);

// Snap values to the 8-bit grid used by the PNG files so in-memory tensors
// and their on-disk form are identical.
Tensor quantize8(const Tensor& image);

struct PreparedArtifacts {
  std::string dir;
  Dataset train;
  Dataset eval;
  Codec codec;
  Denoiser denoiser;
  Zoo zoo;
  std::vector<int> benchmark;  // indices into the eval split
};

struct PrepareSummary {
  bool reused = false;
  std::string dir;
};

struct AttackRunSummary {
  int attacked = 0;
  int failed = 0;
  std::string run_dir;
};

// Orchestrates the five pipeline commands over a filesystem layout:
//   <out>/artifacts/<prepare-hash>/...   shared trained artifacts + adapters
//   <out>/runs/<config-hash>/...         per-run results, images, reports
class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig cfg);

  const ExperimentConfig& config() const { return cfg_; }

  PrepareSummary prepare();
  const PreparedArtifacts& artifacts();

  // One adapter file per id. Empty list is a no-op. Returns files written
  // (existing adapters are reused).
  int align(const std::vector<std::string>& ids);

  AttackRunSummary attack(const std::vector<std::string>& ids);

  EvalReport evaluate(const std::string& run_id = "");

  struct SweepPoint {
    double value;
    std::string run_hash;
    EvalReport report;
  };
  std::vector<SweepPoint> sweep(const std::string& parameter,
                                const std::vector<double>& values);

  std::vector<std::string> benchmark_ids();

  std::string run_dir() const;
  std::string artifacts_dir() const;
  std::string adapters_dir() const;

  // eval-split index for an id like "eval_0007"; throws on unknown ids.
  int index_of_eval_id(const std::string& id);

 private:
  void ensure_prepared();
  LoRAAdapter load_adapter(const std::string& id);
  Conditioning cond_for_label(int label) const;
  void attack_one(const std::string& id, const std::string& run_directory);

  ExperimentConfig cfg_;
  std::optional<PreparedArtifacts> art_;
};

// Table-4-style grid: one attack+eval run per flag combination, shared
// prepared artifacts and seeds. Failures are recorded per cell.
std::vector<AblationCell> run_ablation_grid(const ExperimentConfig& base,
                                            const std::vector<AblationFlags>& grid);

}  // namespace apa
