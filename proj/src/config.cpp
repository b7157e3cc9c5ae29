#include "apa/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "apa/rng.hpp"

namespace apa {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& what) {
  throw std::invalid_argument("config: " + what);
}

// Strict object reader: every key must be consumed exactly once.
class Obj {
 public:
  Obj(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) bad(where_ + " must be an object");
  }
  ~Obj() = default;

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      bad(where_ + "." + key + " has the wrong type");
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() {
    for (auto& [key, value] : j_.items())
      if (!seen_.count(key)) bad("unknown key '" + where_ + "." + key + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::string mode_name(AttackConfig::Mode m) {
  return m == AttackConfig::Mode::SG ? "sg" : "gc";
}
AttackConfig::Mode mode_from(const std::string& s) {
  if (s == "sg") return AttackConfig::Mode::SG;
  if (s == "gc") return AttackConfig::Mode::GC;
  bad("attack.mode must be 'sg' or 'gc'");
}
std::string target_name(AttackConfig::Target t) {
  return t == AttackConfig::Target::latent ? "latent" : "conditioning";
}
AttackConfig::Target target_from(const std::string& s) {
  if (s == "latent") return AttackConfig::Target::latent;
  if (s == "conditioning" || s == "prompt") return AttackConfig::Target::conditioning;
  bad("attack.target must be 'latent' or 'conditioning'");
}

json member_to_json(const ZooMemberConfig& m) {
  return json{{"arch", arch_name(m.arch)},
              {"seed", m.seed},
              {"epochs", m.epochs},
              {"batch_size", m.batch_size},
              {"lr", m.lr}};
}

ZooMemberConfig member_from_json(const json& j, const std::string& where) {
  Obj o(j, where);
  ZooMemberConfig m;
  m.arch = arch_from_name(o.get<std::string>("arch", "small_cnn_a"));
  m.seed = o.get<uint64_t>("seed", 0);
  m.epochs = o.get<int>("epochs", 30);
  m.batch_size = o.get<int>("batch_size", 16);
  m.lr = o.get<double>("lr", 3e-3);
  o.finish();
  return m;
}

}  // namespace

AttackConfig AttackSection::to_attack_config(uint64_t seed) const {
  AttackConfig cfg;
  cfg.T = effective_T();
  cfg.T_a = std::min(T_a, cfg.T);
  cfg.N = N;
  cfg.eps_a = eps_a;
  cfg.mu = mu;
  cfg.rho = rho;
  cfg.mode = mode;
  cfg.target = target;
  cfg.dual_path = dual_path;
  cfg.diffusion_aug = diffusion_aug;
  cfg.one_stage_lambda = one_stage_lambda;
  cfg.seed = seed;
  return cfg;
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  c.dataset.seed = 11;
  c.denoiser.channels = 1;
  c.denoiser.height = 32;
  c.denoiser.width = 32;
  c.denoiser.base_width = 10;
  c.denoiser.cond_dim = 16;
  c.denoiser.embed_dim = 32;
  c.denoiser_train.epochs = 14;
  c.denoiser_train.batch_size = 4;
  c.denoiser_train.lr = 2e-3;
  c.vca.steps = 200;
  c.vca.learning_rate = 1e-3;
  c.vca.rank = 4;
  c.augment.pad_max = 4;
  c.zoo.substitute = {ClassifierArch::small_cnn_a, 101, 30, 16, 3e-3};
  c.zoo.targets = {{ClassifierArch::small_cnn_b, 202, 45, 16, 3e-3},
                   {ClassifierArch::small_mlp, 303, 45, 16, 3e-3},
                   {ClassifierArch::tiny_attention, 404, 60, 16, 3e-3}};
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c = defaults();
  Obj root(j, "config");
  c.seed = root.get<uint64_t>("seed", c.seed);
  c.out_dir = root.get<std::string>("out_dir", c.out_dir);
  c.workers = root.get<int>("workers", c.workers);

  if (root.has("dataset")) {
    Obj o(root.raw("dataset"), "dataset");
    c.dataset.train_count = o.get<int>("train_count", c.dataset.train_count);
    c.dataset.eval_count = o.get<int>("eval_count", c.dataset.eval_count);
    c.dataset.height = o.get<int>("height", c.dataset.height);
    c.dataset.width = o.get<int>("width", c.dataset.width);
    c.dataset.num_classes = o.get<int>("num_classes", c.dataset.num_classes);
    c.dataset.seed = o.get<uint64_t>("seed", c.dataset.seed);
    o.finish();
  }
  if (root.has("codec")) {
    Obj o(root.raw("codec"), "codec");
    std::string mode = o.get<std::string>("mode", "identity");
    if (mode == "identity") c.codec.mode = Codec::Mode::identity;
    else if (mode == "tiny_autoencoder") c.codec.mode = Codec::Mode::tiny_autoencoder;
    else bad("codec.mode must be identity or tiny_autoencoder");
    c.codec.epochs = o.get<int>("epochs", c.codec.epochs);
    c.codec.lr = o.get<double>("lr", c.codec.lr);
    o.finish();
  }
  if (root.has("schedule")) {
    Obj o(root.raw("schedule"), "schedule");
    c.schedule.base_steps = o.get<int>("base_steps", c.schedule.base_steps);
    c.schedule.beta_start = o.get<double>("beta_start", c.schedule.beta_start);
    c.schedule.beta_end = o.get<double>("beta_end", c.schedule.beta_end);
    o.finish();
  }
  if (root.has("denoiser")) {
    Obj o(root.raw("denoiser"), "denoiser");
    c.denoiser.base_width = o.get<int>("base_width", c.denoiser.base_width);
    c.denoiser.cond_dim = o.get<int>("cond_dim", c.denoiser.cond_dim);
    c.denoiser.embed_dim = o.get<int>("embed_dim", c.denoiser.embed_dim);
    c.denoiser_train.epochs = o.get<int>("epochs", c.denoiser_train.epochs);
    c.denoiser_train.batch_size = o.get<int>("batch_size", c.denoiser_train.batch_size);
    c.denoiser_train.lr = o.get<double>("lr", c.denoiser_train.lr);
    c.denoiser_train.class_conditional =
        o.get<bool>("class_conditional", c.denoiser_train.class_conditional);
    o.finish();
  }
  if (root.has("vca")) {
    Obj o(root.raw("vca"), "vca");
    c.vca.learning_rate = o.get<double>("learning_rate", c.vca.learning_rate);
    c.vca.steps = o.get<int>("steps", c.vca.steps);
    c.vca.rank = o.get<int>("rank", c.vca.rank);
    c.vca.lora_scale = o.get<double>("scale", c.vca.lora_scale);
    o.finish();
  }
  if (root.has("attack")) {
    Obj o(root.raw("attack"), "attack");
    c.attack.T_sg = o.get<int>("T_sg", c.attack.T_sg);
    c.attack.T_gc = o.get<int>("T_gc", c.attack.T_gc);
    if (o.has("T")) c.attack.T_override = o.get<int>("T", 0);
    c.attack.T_a = o.get<int>("T_a", c.attack.T_a);
    c.attack.N = o.get<int>("N", c.attack.N);
    c.attack.eps_a = o.get<double>("eps_a", c.attack.eps_a);
    c.attack.mu = o.get<double>("mu", c.attack.mu);
    c.attack.rho = o.get<double>("rho", c.attack.rho);
    c.attack.mode = mode_from(o.get<std::string>("mode", mode_name(c.attack.mode)));
    c.attack.target =
        target_from(o.get<std::string>("target", target_name(c.attack.target)));
    c.attack.dual_path = o.get<bool>("dual_path", c.attack.dual_path);
    c.attack.diffusion_aug = o.get<bool>("diffusion_aug", c.attack.diffusion_aug);
    c.attack.one_stage_lambda =
        o.get<double>("one_stage_lambda", c.attack.one_stage_lambda);
    c.attack.use_vca = o.get<bool>("use_vca", c.attack.use_vca);
    o.finish();
  }
  if (root.has("augment")) {
    Obj o(root.raw("augment"), "augment");
    c.augment.pad_max = o.get<int>("pad_max", c.augment.pad_max);
    std::vector<double> br = o.get<std::vector<double>>(
        "brightness", {c.augment.brightness_lo, c.augment.brightness_hi});
    if (br.size() != 2) bad("augment.brightness must be [lo, hi]");
    c.augment.brightness_lo = br[0];
    c.augment.brightness_hi = br[1];
    o.finish();
  }
  if (root.has("zoo")) {
    Obj o(root.raw("zoo"), "zoo");
    if (o.has("substitute"))
      c.zoo.substitute = member_from_json(o.raw("substitute"), "zoo.substitute");
    if (o.has("targets")) {
      const json& tj = o.raw("targets");
      if (!tj.is_array() || tj.empty()) bad("zoo.targets must be a non-empty array");
      c.zoo.targets.clear();
      for (size_t i = 0; i < tj.size(); ++i)
        c.zoo.targets.push_back(
            member_from_json(tj[i], "zoo.targets[" + std::to_string(i) + "]"));
    }
    c.zoo.accuracy_gate = o.get<double>("accuracy_gate", c.zoo.accuracy_gate);
    o.finish();
  }
  if (root.has("eval")) {
    Obj o(root.raw("eval"), "eval");
    c.eval.benchmark_size = o.get<int>("benchmark_size", c.eval.benchmark_size);
    c.eval.probe_target = o.get<int>("probe_target", c.eval.probe_target);
    o.finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) bad("cannot open config file " + path);
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) bad("config file " + path + " is not valid JSON");
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["workers"] = workers;
  j["dataset"] = {{"train_count", dataset.train_count},
                  {"eval_count", dataset.eval_count},
                  {"height", dataset.height},
                  {"width", dataset.width},
                  {"num_classes", dataset.num_classes},
                  {"seed", dataset.seed}};
  j["codec"] = {{"mode", codec.mode == Codec::Mode::identity ? "identity"
                                                             : "tiny_autoencoder"},
                {"epochs", codec.epochs},
                {"lr", codec.lr}};
  j["schedule"] = {{"base_steps", schedule.base_steps},
                   {"beta_start", schedule.beta_start},
                   {"beta_end", schedule.beta_end}};
  j["denoiser"] = {{"base_width", denoiser.base_width},
                   {"cond_dim", denoiser.cond_dim},
                   {"embed_dim", denoiser.embed_dim},
                   {"epochs", denoiser_train.epochs},
                   {"batch_size", denoiser_train.batch_size},
                   {"lr", denoiser_train.lr},
                   {"class_conditional", denoiser_train.class_conditional}};
  j["vca"] = {{"learning_rate", vca.learning_rate},
              {"steps", vca.steps},
              {"rank", vca.rank},
              {"scale", vca.lora_scale}};
  json atk = {{"T_sg", attack.T_sg},
              {"T_gc", attack.T_gc},
              {"T_a", attack.T_a},
              {"N", attack.N},
              {"eps_a", attack.eps_a},
              {"mu", attack.mu},
              {"rho", attack.rho},
              {"mode", mode_name(attack.mode)},
              {"target", target_name(attack.target)},
              {"dual_path", attack.dual_path},
              {"diffusion_aug", attack.diffusion_aug},
              {"one_stage_lambda", attack.one_stage_lambda},
              {"use_vca", attack.use_vca}};
  if (attack.T_override) atk["T"] = *attack.T_override;
  j["attack"] = atk;
  j["augment"] = {{"pad_max", augment.pad_max},
                  {"brightness", {augment.brightness_lo, augment.brightness_hi}}};
  json targets = json::array();
  for (const ZooMemberConfig& m : zoo.targets) targets.push_back(member_to_json(m));
  j["zoo"] = {{"substitute", member_to_json(zoo.substitute)},
              {"targets", targets},
              {"accuracy_gate", zoo.accuracy_gate}};
  j["eval"] = {{"benchmark_size", eval.benchmark_size},
               {"probe_target", eval.probe_target}};
  return j;
}

void ExperimentConfig::validate() const {
  if (dataset.height % 4 || dataset.width % 4)
    bad("dataset height/width must be divisible by 4");
  if (dataset.train_count < 1 || dataset.eval_count < 1)
    bad("dataset split sizes must be positive");
  if (workers < 1) bad("workers must be >= 1");
  if (eval.benchmark_size < 1 || eval.benchmark_size > dataset.eval_count)
    bad("eval.benchmark_size must fit in the eval split");
  if (eval.probe_target < 0 ||
      eval.probe_target >= static_cast<int>(zoo.targets.size()))
    bad("eval.probe_target out of range");
  if (zoo.targets.empty()) bad("zoo needs at least one target");
  vca.validate();
  augment.validate(dataset.height, dataset.width);
  attack.to_attack_config(seed).validate();
  if (schedule.base_steps < attack.effective_T())
    bad("schedule.base_steps smaller than the trajectory length");
}

namespace {
std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}
}  // namespace

std::string ExperimentConfig::config_hash() const {
  return hex64(fnv1a(to_json().dump()));
}

std::string ExperimentConfig::prepare_hash() const {
  json j = to_json();
  json sub = {{"seed", seed},
              {"dataset", j["dataset"]},
              {"codec", j["codec"]},
              {"schedule", j["schedule"]},
              {"denoiser", j["denoiser"]},
              {"zoo", j["zoo"]},
              {"benchmark_size", eval.benchmark_size}};
  return hex64(fnv1a(sub.dump()));
}

std::string ExperimentConfig::vca_hash() const {
  json sub = {{"prepare", prepare_hash()}, {"vca", to_json()["vca"]}};
  return hex64(fnv1a(sub.dump()));
}

}  // namespace apa
