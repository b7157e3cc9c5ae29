// apa: two-stage preference-aligned latent attack pipeline.
// Subcommands: prepare, align, attack, eval, sweep.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

#include "apa/pipeline.hpp"

using namespace apa;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> target;
  bool no_vca = false;
  std::optional<double> one_stage;
  std::optional<int> workers;
  std::optional<std::string> out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "experiment config file (JSON)");
  cmd->add_option("--seed", o.seed, "override the global seed");
  cmd->add_option("--mode", o.mode, "backpropagation mode: sg or gc")
      ->check(CLI::IsMember({"sg", "gc"}));
  cmd->add_option("--target", o.target, "optimization target: latent or prompt")
      ->check(CLI::IsMember({"latent", "prompt"}));
  cmd->add_flag("--no-vca", o.no_vca, "attack without stage-1 adapters");
  cmd->add_option("--one-stage", o.one_stage,
                  "single-stage baseline with the given lambda");
  cmd->add_option("--workers", o.workers, "worker pool size");
  cmd->add_option("--out", o.out_dir, "output directory");
}

ExperimentConfig build_config(const CommonOpts& o) {
  ExperimentConfig cfg = o.config_path.empty()
                             ? ExperimentConfig::defaults()
                             : ExperimentConfig::load(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.mode)
    cfg.attack.mode =
        *o.mode == "sg" ? AttackConfig::Mode::SG : AttackConfig::Mode::GC;
  if (o.target)
    cfg.attack.target = *o.target == "prompt" ? AttackConfig::Target::conditioning
                                              : AttackConfig::Target::latent;
  if (o.no_vca) cfg.attack.use_vca = false;
  if (o.one_stage) {
    cfg.attack.one_stage_lambda = *o.one_stage;
    cfg.attack.use_vca = false;
  }
  if (o.workers) cfg.workers = *o.workers;
  if (o.out_dir) cfg.out_dir = *o.out_dir;
  cfg.validate();
  return cfg;
}

std::vector<std::string> parse_ids(const std::string& csv, Pipeline& p) {
  if (csv.empty()) return p.benchmark_ids();
  std::vector<std::string> ids;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) ids.push_back(item);
  return ids;
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> vals;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) vals.push_back(std::stod(item));
  return vals;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage preference-aligned latent attack pipeline"};
  app.require_subcommand(1);

  CommonOpts prepare_o, align_o, attack_o, eval_o, sweep_o;
  std::string align_ids, attack_ids, eval_run, sweep_param, sweep_values;

  CLI::App* c_prepare =
      app.add_subcommand("prepare", "dataset + denoiser + classifier zoo");
  add_common(c_prepare, prepare_o);

  CLI::App* c_align = app.add_subcommand("align", "stage-1 per-image adapters");
  add_common(c_align, align_o);
  c_align->add_option("--ids", align_ids,
                      "comma-separated image ids (default: benchmark)");

  CLI::App* c_attack = app.add_subcommand("attack", "stage-2 attack runs");
  add_common(c_attack, attack_o);
  c_attack->add_option("--ids", attack_ids,
                       "comma-separated image ids (default: benchmark)");
  std::optional<int> attack_n;
  c_attack->add_option("--iterations", attack_n, "override attack iterations N");

  CLI::App* c_eval = app.add_subcommand("eval", "metrics report for a run");
  add_common(c_eval, eval_o);
  c_eval->add_option("--run", eval_run, "run id to evaluate (default: own hash)");

  CLI::App* c_sweep = app.add_subcommand("sweep", "hyperparameter sweep");
  add_common(c_sweep, sweep_o);
  c_sweep->add_option("--param", sweep_param, "one of T, T_a, lambda, eps_a, mu")
      ->required();
  c_sweep->add_option("--values", sweep_values, "comma-separated values")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_prepare->parsed()) {
      Pipeline p(build_config(prepare_o));
      PrepareSummary s = p.prepare();
      std::printf("%s artifacts at %s\n", s.reused ? "reused" : "prepared",
                  s.dir.c_str());
    } else if (c_align->parsed()) {
      Pipeline p(build_config(align_o));
      std::vector<std::string> ids = parse_ids(align_ids, p);
      int written = p.align(ids);
      std::printf("aligned %d image(s), %d new adapter file(s) in %s\n",
                  static_cast<int>(ids.size()), written, p.adapters_dir().c_str());
    } else if (c_attack->parsed()) {
      ExperimentConfig cfg = build_config(attack_o);
      if (attack_n) {
        cfg.attack.N = *attack_n;
        cfg.validate();
      }
      Pipeline p(cfg);
      std::vector<std::string> ids = parse_ids(attack_ids, p);
      AttackRunSummary s = p.attack(ids);
      std::printf("attacked %d image(s), %d failed; results in %s\n", s.attacked,
                  s.failed, s.run_dir.c_str());
      if (s.failed > 0) return 2;
    } else if (c_eval->parsed()) {
      Pipeline p(build_config(eval_o));
      EvalReport rep = p.evaluate(eval_run);
      std::printf("%s", rep.text_table().c_str());
    } else if (c_sweep->parsed()) {
      Pipeline p(build_config(sweep_o));
      auto points = p.sweep(sweep_param, parse_values(sweep_values));
      std::printf("sweep over %s finished with %d point(s)\n", sweep_param.c_str(),
                  static_cast<int>(points.size()));
      for (const auto& pt : points)
        std::printf("  %s=%g  black-box ASR %.2f  SSIM %.4f  (run %s)\n",
                    sweep_param.c_str(), pt.value, pt.report.blackbox_asr,
                    pt.report.mean_ssim, pt.run_hash.c_str());
    }
  } catch (const std::exception& e) {
    json err = {{"error", {{"type", "failure"}, {"message", e.what()}}}};
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return 1;
  }
  return 0;
}
