#include "apa/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "apa/container.hpp"
#include "apa/errors.hpp"
#include "apa/image_io.hpp"
#include "apa/metrics.hpp"
#include "apa/plot.hpp"
#include "apa/rng.hpp"

namespace apa {

namespace fs = std::filesystem;
using nlohmann::json;

void parallel_for(int workers, int n, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto body = [&] {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

Tensor quantize8(const Tensor& image) {
  Tensor out = image;
  for (int64_t i = 0; i < out.numel(); ++i) {
    double v = std::clamp(out[i], 0.0, 1.0);
    out[i] = std::lround(v * 255.0) / 255.0;
  }
  return out;
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
}

json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded())
    throw std::runtime_error("invalid JSON in " + path);
  return j;
}

Dataset quantized_dataset(const DatasetSpec& spec, const std::string& split) {
  Dataset ds = generate_dataset(spec, split);
  for (Tensor& img : ds.images) img = quantize8(img);
  return ds;
}

json classifier_meta(const Classifier& c) {
  return json{{"arch", arch_name(c.spec().arch)},
              {"seed", c.spec().seed},
              {"num_classes", c.spec().num_classes},
              {"accuracy", c.spec().trained_accuracy},
              {"channels", c.channels()},
              {"height", c.height()},
              {"width", c.width()}};
}

Classifier classifier_from_container(const Container& c) {
  ClassifierSpec spec;
  spec.arch = arch_from_name(c.meta.at("arch").get<std::string>());
  spec.seed = c.meta.at("seed").get<uint64_t>();
  spec.num_classes = c.meta.at("num_classes").get<int>();
  spec.trained_accuracy = c.meta.at("accuracy").get<double>();
  Classifier cls = Classifier::init(spec, c.meta.at("channels").get<int>(),
                                    c.meta.at("height").get<int>(),
                                    c.meta.at("width").get<int>());
  cls.params() = c.to_params();
  return cls;
}

}  // namespace

Pipeline::Pipeline(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
}

std::string Pipeline::artifacts_dir() const {
  return cfg_.out_dir + "/artifacts/" + cfg_.prepare_hash();
}

std::string Pipeline::adapters_dir() const {
  return artifacts_dir() + "/adapters/" + cfg_.vca_hash();
}

std::string Pipeline::run_dir() const {
  return cfg_.out_dir + "/runs/" + cfg_.config_hash();
}

Conditioning Pipeline::cond_for_label(int label) const {
  if (cfg_.denoiser_train.class_conditional)
    return Conditioning::class_of(cfg_.denoiser.cond_dim, label,
                                  cfg_.dataset.num_classes);
  return Conditioning::null_of(cfg_.denoiser.cond_dim);
}

int Pipeline::index_of_eval_id(const std::string& id) {
  if (id.size() != 9 || id.substr(0, 5) != "eval_")
    throw std::invalid_argument("unknown image id '" + id + "'");
  int idx = std::stoi(id.substr(5));
  if (idx < 0 || idx >= cfg_.dataset.eval_count)
    throw std::invalid_argument("unknown image id '" + id + "'");
  return idx;
}

PrepareSummary Pipeline::prepare() {
  std::string dir = artifacts_dir();
  std::string manifest_path = dir + "/manifest.json";
  PrepareSummary summary;
  summary.dir = dir;

  if (fs::exists(manifest_path)) {
    json manifest = read_json_file(manifest_path);
    std::string recorded = manifest.value("prepare_hash", "");
    if (recorded != cfg_.prepare_hash())
      throw std::runtime_error(
          "prepare: artifacts at " + dir + " record prepare hash '" + recorded +
          "' but the config requires '" + cfg_.prepare_hash() +
          "'; remove the directory or fix the config");
    for (const json& f : manifest.at("files"))
      if (!fs::exists(dir + "/" + f.get<std::string>()))
        throw std::runtime_error("prepare: artifact file missing: " + dir + "/" +
                                 f.get<std::string>());
    summary.reused = true;
    return summary;
  }

  fs::create_directories(dir + "/zoo");
  fs::create_directories(dir + "/dataset/train");
  fs::create_directories(dir + "/dataset/eval");
  fs::create_directories(dir + "/adapters");

  PreparedArtifacts art;
  art.dir = dir;
  art.train = quantized_dataset(cfg_.dataset, "train");
  art.eval = quantized_dataset(cfg_.dataset, "eval");

  std::vector<std::string> files;
  // dataset images + labels
  json labels = json::object();
  for (size_t i = 0; i < art.train.images.size(); ++i) {
    std::string rel = "dataset/train/" + art.train.ids[i] + ".png";
    write_png(dir + "/" + rel, art.train.images[i]);
    labels[art.train.ids[i]] = art.train.labels[i];
    files.push_back(rel);
  }
  for (size_t i = 0; i < art.eval.images.size(); ++i) {
    std::string rel = "dataset/eval/" + art.eval.ids[i] + ".png";
    write_png(dir + "/" + rel, art.eval.images[i]);
    labels[art.eval.ids[i]] = art.eval.labels[i];
    files.push_back(rel);
  }
  write_text(dir + "/dataset/labels.json", labels.dump(2) + "\n");
  files.push_back("dataset/labels.json");

  // codec
  if (cfg_.codec.mode == Codec::Mode::tiny_autoencoder) {
    art.codec = Codec::tiny_autoencoder_init(1, derive_seed(cfg_.seed, "codec"));
    art.codec.train(art.train.images, cfg_.codec.epochs, cfg_.codec.lr,
                    derive_seed(cfg_.seed, "codec-train"));
    Container cc = Container::from_params(art.codec.params(),
                                          json{{"mode", "tiny_autoencoder"}});
    save_container(dir + "/codec.apac", cc);
    files.push_back("codec.apac");
  } else {
    art.codec = Codec::identity();
  }

  // denoiser: trained over the dense base schedule; conditioning on
  // log-SNR makes it serve any subsampled trajectory.
  DenoiserConfig dc = cfg_.denoiser;
  dc.channels = 1;
  dc.height = cfg_.dataset.height;
  dc.width = cfg_.dataset.width;
  dc.num_classes = cfg_.dataset.num_classes;
  NoiseSchedule base = NoiseSchedule::linear_beta(
      cfg_.schedule.base_steps, cfg_.schedule.base_steps, cfg_.schedule.beta_start,
      cfg_.schedule.beta_end);
  DenoiserTrainConfig dtc = cfg_.denoiser_train;
  dtc.seed = derive_seed(cfg_.seed, "denoiser");
  art.denoiser = train_denoiser(art.train.images, art.train.labels, base,
                                art.codec, dc, dtc);
  {
    json meta = {{"base_width", dc.base_width},
                 {"cond_dim", dc.cond_dim},
                 {"embed_dim", dc.embed_dim},
                 {"channels", dc.channels},
                 {"height", dc.height},
                 {"width", dc.width},
                 {"num_classes", dc.num_classes},
                 {"seed", dtc.seed},
                 {"schedule",
                  {{"base_steps", cfg_.schedule.base_steps},
                   {"beta_start", cfg_.schedule.beta_start},
                   {"beta_end", cfg_.schedule.beta_end}}}};
    save_container(dir + "/denoiser.apac",
                   Container::from_params(art.denoiser.params(), meta));
    files.push_back("denoiser.apac");
  }

  // zoo
  auto train_member = [&](const ZooMemberConfig& m) {
    ClassifierSpec spec;
    spec.arch = m.arch;
    spec.seed = m.seed;
    spec.num_classes = cfg_.dataset.num_classes;
    ClassifierTrainOptions opt;
    opt.epochs = m.epochs;
    opt.batch_size = m.batch_size;
    opt.lr = m.lr;
    opt.accuracy_gate = cfg_.zoo.accuracy_gate;
    return train_classifier(spec, art.train.images, art.train.labels,
                            art.eval.images, art.eval.labels, opt);
  };
  art.zoo.substitute = train_member(cfg_.zoo.substitute);
  for (const ZooMemberConfig& m : cfg_.zoo.targets)
    art.zoo.targets.push_back(train_member(m));
  art.zoo.assert_valid();
  save_container(dir + "/zoo/substitute.apac",
                 Container::from_params(art.zoo.substitute.params(),
                                        classifier_meta(art.zoo.substitute)));
  files.push_back("zoo/substitute.apac");
  for (size_t i = 0; i < art.zoo.targets.size(); ++i) {
    std::string rel = "zoo/target_" + std::to_string(i) + ".apac";
    save_container(dir + "/" + rel,
                   Container::from_params(art.zoo.targets[i].params(),
                                          classifier_meta(art.zoo.targets[i])));
    files.push_back(rel);
  }

  // benchmark: first eval images every zoo member classifies correctly
  for (size_t i = 0;
       i < art.eval.images.size() &&
       static_cast<int>(art.benchmark.size()) < cfg_.eval.benchmark_size;
       ++i) {
    bool all_correct =
        art.zoo.substitute.predict_class(art.eval.images[i]) == art.eval.labels[i];
    for (const Classifier& t : art.zoo.targets)
      all_correct =
          all_correct && t.predict_class(art.eval.images[i]) == art.eval.labels[i];
    if (all_correct) art.benchmark.push_back(static_cast<int>(i));
  }
  if (static_cast<int>(art.benchmark.size()) < cfg_.eval.benchmark_size)
    throw TrainingFailure(
        "prepare: only " + std::to_string(art.benchmark.size()) +
        " eval images are classified correctly by the whole zoo; need " +
        std::to_string(cfg_.eval.benchmark_size));

  json manifest = {{"prepare_hash", cfg_.prepare_hash()},
                   {"benchmark", art.benchmark},
                   {"files", files}};
  write_text(manifest_path, manifest.dump(2) + "\n");
  art_ = std::move(art);
  return summary;
}

void Pipeline::ensure_prepared() {
  if (art_) return;
  std::string dir = artifacts_dir();
  std::string manifest_path = dir + "/manifest.json";
  if (!fs::exists(manifest_path)) {
    prepare();
    if (art_) return;
  }
  json manifest = read_json_file(manifest_path);
  if (manifest.value("prepare_hash", "") != cfg_.prepare_hash())
    throw std::runtime_error("artifacts at " + dir + " do not match the config");

  PreparedArtifacts art;
  art.dir = dir;
  art.train = quantized_dataset(cfg_.dataset, "train");
  art.eval = quantized_dataset(cfg_.dataset, "eval");
  if (cfg_.codec.mode == Codec::Mode::tiny_autoencoder) {
    Container cc = load_container(dir + "/codec.apac");
    art.codec = Codec::tiny_autoencoder_init(1, 0);
    art.codec.params() = cc.to_params();
  } else {
    art.codec = Codec::identity();
  }
  Container dcont = load_container(dir + "/denoiser.apac");
  DenoiserConfig dc = cfg_.denoiser;
  dc.channels = dcont.meta.at("channels").get<int>();
  dc.height = dcont.meta.at("height").get<int>();
  dc.width = dcont.meta.at("width").get<int>();
  dc.num_classes = dcont.meta.at("num_classes").get<int>();
  art.denoiser = Denoiser::init(dc, 0);
  art.denoiser.params() = dcont.to_params();
  art.zoo.substitute =
      classifier_from_container(load_container(dir + "/zoo/substitute.apac"));
  for (size_t i = 0; i < cfg_.zoo.targets.size(); ++i)
    art.zoo.targets.push_back(classifier_from_container(
        load_container(dir + "/zoo/target_" + std::to_string(i) + ".apac")));
  art.zoo.assert_valid();
  art.benchmark = manifest.at("benchmark").get<std::vector<int>>();
  art_ = std::move(art);
}

const PreparedArtifacts& Pipeline::artifacts() {
  ensure_prepared();
  return *art_;
}

std::vector<std::string> Pipeline::benchmark_ids() {
  ensure_prepared();
  std::vector<std::string> ids;
  for (int idx : art_->benchmark) ids.push_back(art_->eval.ids[idx]);
  return ids;
}

int Pipeline::align(const std::vector<std::string>& ids) {
  if (ids.empty()) return 0;
  ensure_prepared();
  if (!fs::exists(artifacts_dir() + "/denoiser.apac"))
    throw std::runtime_error("align: denoiser checkpoint missing; run prepare");
  std::string adir = adapters_dir();
  fs::create_directories(adir);
  std::vector<int> indices;
  for (const std::string& id : ids) indices.push_back(index_of_eval_id(id));

  std::atomic<int> written{0};
  NoiseSchedule sched = NoiseSchedule::linear_beta(
      cfg_.attack.effective_T(), cfg_.schedule.base_steps,
      cfg_.schedule.beta_start, cfg_.schedule.beta_end);
  parallel_for(cfg_.workers, static_cast<int>(ids.size()), [&](int k) {
    const std::string& id = ids[k];
    std::string path = adir + "/" + id + ".apac";
    if (fs::exists(path)) return;
    int idx = indices[k];
    VcaConfig vcfg = cfg_.vca;
    vcfg.seed = derive_seed(cfg_.seed, "vca", idx);
    LoRAAdapter adapter =
        vca_finetune(art_->denoiser, art_->eval.images[idx], vcfg,
                     cond_for_label(art_->eval.labels[idx]), sched, art_->codec);
    nn::ParamStore ps;
    for (const auto& [name, layer] : adapter.layers()) {
      ps.add(name + ".lora_a", layer.a);
      ps.add(name + ".lora_b", layer.b);
    }
    json meta = {{"image_id", id},
                 {"rank", adapter.rank()},
                 {"scale", adapter.scale()},
                 {"vca_hash", cfg_.vca_hash()}};
    save_container(path, Container::from_params(ps, meta));
    ++written;
  });
  return written.load();
}

LoRAAdapter Pipeline::load_adapter(const std::string& id) {
  std::string path = adapters_dir() + "/" + id + ".apac";
  if (!fs::exists(path))
    throw std::runtime_error("attack: adapter missing for " + id + " at " + path +
                             "; run align (or pass --no-vca)");
  Container c = load_container(path);
  LoRAAdapter adapter(c.meta.at("rank").get<int>(),
                      c.meta.at("scale").get<double>());
  for (const auto& [name, t] : c.tensors) {
    if (name.size() > 7 && name.substr(name.size() - 7) == ".lora_a") {
      std::string base = name.substr(0, name.size() - 7);
      LoRAAdapter::Layer layer;
      layer.a = t;
      layer.b = c.tensors.at(base + ".lora_b");
      adapter.layers().emplace(base, std::move(layer));
    }
  }
  return adapter;
}

void Pipeline::attack_one(const std::string& id, const std::string& run_directory) {
  int idx = index_of_eval_id(id);
  const Tensor& image = art_->eval.images[idx];
  int label = art_->eval.labels[idx];

  bool one_stage = cfg_.attack.one_stage_lambda >= 0.0;
  bool use_adapter = cfg_.attack.use_vca && !one_stage;
  LoRAAdapter adapter;
  if (use_adapter) adapter = load_adapter(id);

  AttackConfig acfg = cfg_.attack.to_attack_config(cfg_.seed);
  NoiseSchedule sched = NoiseSchedule::linear_beta(
      acfg.T, cfg_.schedule.base_steps, cfg_.schedule.beta_start,
      cfg_.schedule.beta_end);
  AugmentSpec aug = cfg_.augment;
  aug.seed = derive_seed(cfg_.seed, "augment", idx);
  RewardModel model{&art_->zoo.substitute, label};
  Conditioning cond = cond_for_label(label);

  AttackResult res =
      run_attack(image, label, art_->denoiser, use_adapter ? &adapter : nullptr,
                 model, acfg, cond, sched, art_->codec, aug);

  json rec = {{"image_id", id},
              {"config_hash", cfg_.config_hash()},
              {"label", label},
              {"objective_per_iteration", res.objective_per_iteration},
              {"whitebox_per_iteration", res.whitebox_per_iteration},
              {"whitebox_success", res.whitebox_success},
              {"warnings", res.warnings},
              {"failed", res.failed},
              {"error", res.error},
              {"image", "images/" + id + "_adv.png"}};
  if (!res.failed) write_png(run_directory + "/images/" + id + "_adv.png", res.x_adv);
  write_text(run_directory + "/results/" + id + ".json", rec.dump(2) + "\n");
}

AttackRunSummary Pipeline::attack(const std::vector<std::string>& ids) {
  ensure_prepared();
  bool one_stage = cfg_.attack.one_stage_lambda >= 0.0;
  if (cfg_.attack.use_vca && !one_stage) {
    // adapters must exist for every id
    for (const std::string& id : ids)
      if (!fs::exists(adapters_dir() + "/" + id + ".apac"))
        throw std::runtime_error("attack: adapter missing for " + id +
                                 "; run align first or pass --no-vca");
  }
  std::string dir = run_dir();
  fs::create_directories(dir + "/results");
  fs::create_directories(dir + "/images");
  fs::create_directories(dir + "/report");
  fs::create_directories(dir + "/plots");
  write_text(dir + "/config.json", cfg_.to_json().dump(2) + "\n");

  AttackRunSummary summary;
  summary.run_dir = dir;
  std::atomic<int> failed{0};
  parallel_for(cfg_.workers, static_cast<int>(ids.size()), [&](int k) {
    try {
      attack_one(ids[k], dir);
    } catch (const std::exception& e) {
      // per-image isolation: record the failure, keep the batch going
      json rec = {{"image_id", ids[k]},
                  {"config_hash", cfg_.config_hash()},
                  {"failed", true},
                  {"error", e.what()}};
      write_text(dir + "/results/" + ids[k] + ".json", rec.dump(2) + "\n");
      ++failed;
    }
  });
  // count failures recorded inside result files as well
  for (const std::string& id : ids) {
    json rec = read_json_file(dir + "/results/" + id + ".json");
    if (rec.value("failed", false)) ++failed;
  }
  summary.attacked = static_cast<int>(ids.size());
  summary.failed = failed.load();
  return summary;
}

EvalReport Pipeline::evaluate(const std::string& run_id) {
  ensure_prepared();
  std::string hash = run_id.empty() ? cfg_.config_hash() : run_id;
  std::string dir = cfg_.out_dir + "/runs/" + hash;
  if (!fs::exists(dir + "/results"))
    throw std::runtime_error("eval: no attack run at " + dir);

  EvalReport report;
  report.config_hash = hash;
  report.run_id = hash;
  report.model_names.push_back("substitute");
  for (size_t i = 0; i < art_->zoo.targets.size(); ++i)
    report.model_names.push_back("target_" + std::to_string(i));
  const Classifier& probe = art_->zoo.targets.at(cfg_.eval.probe_target);

  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir + "/results"))
    if (entry.path().extension() == ".json")
      ids.push_back(entry.path().stem().string());
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw std::runtime_error("eval: empty run at " + dir);

  std::vector<PerImageRecord> records(ids.size());
  std::vector<char> ok(ids.size(), 0);
  parallel_for(cfg_.workers, static_cast<int>(ids.size()), [&](int k) {
    json rec = read_json_file(dir + "/results/" + ids[k] + ".json");
    if (rec.value("failed", false)) return;
    int idx = index_of_eval_id(ids[k]);
    Tensor clean = art_->eval.images[idx];
    Tensor adv = read_png(dir + "/" + rec.at("image").get<std::string>());
    PerImageRecord r;
    r.id = ids[k];
    r.label = art_->eval.labels[idx];
    r.predictions["substitute"] = art_->zoo.substitute.predict_class(adv);
    for (size_t ti = 0; ti < art_->zoo.targets.size(); ++ti)
      r.predictions["target_" + std::to_string(ti)] =
          art_->zoo.targets[ti].predict_class(adv);
    r.ssim = ssim(clean, adv);
    r.perceptual = perceptual_distance(clean, adv, probe, art_->zoo.substitute);
    r.whitebox_flag = r.predictions["substitute"] != r.label;
    records[k] = std::move(r);
    ok[k] = 1;
  });
  for (size_t k = 0; k < ids.size(); ++k)
    if (ok[k]) report.records.push_back(std::move(records[k]));
  if (report.records.empty())
    throw std::runtime_error("eval: every image in " + dir + " failed");
  report.recompute_aggregates();
  report.check_consistency();

  write_text(dir + "/report/report.json", report.to_json().dump(2) + "\n");
  write_text(dir + "/report/report.txt", report.text_table());
  write_text(dir + "/report/report.csv", report.csv());

  // mean white-box reward per iteration across the batch
  std::vector<double> mean_reward;
  int counted = 0;
  for (const std::string& id : ids) {
    json rec = read_json_file(dir + "/results/" + id + ".json");
    if (rec.value("failed", false) || !rec.contains("whitebox_per_iteration"))
      continue;
    std::vector<double> wb = rec["whitebox_per_iteration"].get<std::vector<double>>();
    if (mean_reward.empty()) mean_reward.assign(wb.size(), 0.0);
    if (wb.size() == mean_reward.size()) {
      for (size_t i = 0; i < wb.size(); ++i) mean_reward[i] += wb[i];
      ++counted;
    }
  }
  if (counted > 0 && mean_reward.size() > 1) {
    PlotSeries s;
    s.label = "reward";
    for (size_t i = 0; i < mean_reward.size(); ++i) {
      s.xs.push_back(static_cast<double>(i));
      s.ys.push_back(mean_reward[i] / counted);
    }
    render_line_plot(dir + "/plots/reward_vs_iteration.png",
                     "MEAN WHITE-BOX REWARD", "ITERATION", "REWARD", {s});
  }
  return report;
}

std::vector<Pipeline::SweepPoint> Pipeline::sweep(
    const std::string& parameter, const std::vector<double>& values) {
  static const std::vector<std::string> valid = {"T", "T_a", "lambda", "eps_a", "mu"};
  if (std::find(valid.begin(), valid.end(), parameter) == valid.end()) {
    std::string names;
    for (const std::string& v : valid) names += (names.empty() ? "" : ", ") + v;
    throw std::invalid_argument("sweep: unknown parameter '" + parameter +
                                "'; valid parameters: " + names);
  }
  if (values.empty()) throw std::invalid_argument("sweep: no values");
  ensure_prepared();

  std::vector<SweepPoint> points;
  for (double v : values) {
    ExperimentConfig c = cfg_;
    if (parameter == "T") c.attack.T_override = static_cast<int>(v);
    else if (parameter == "T_a") c.attack.T_a = static_cast<int>(v);
    else if (parameter == "eps_a") c.attack.eps_a = v;
    else if (parameter == "mu") c.attack.mu = v;
    else if (parameter == "lambda") {
      c.attack.one_stage_lambda = v;
      c.attack.use_vca = false;
    }
    c.validate();
    Pipeline sub(c);
    std::vector<std::string> ids = sub.benchmark_ids();
    if (c.attack.use_vca && c.attack.one_stage_lambda < 0.0) sub.align(ids);
    sub.attack(ids);
    SweepPoint p;
    p.value = v;
    p.run_hash = c.config_hash();
    p.report = sub.evaluate();
    points.push_back(std::move(p));
  }

  std::string sdir = cfg_.out_dir + "/sweeps/" + parameter + "-" + cfg_.config_hash();
  fs::create_directories(sdir);
  json sj = json::array();
  std::ostringstream table;
  table << "value      blackbox_asr  whitebox_asr  mean_ssim\n";
  PlotSeries asr_s{"BB ASR", {}, {}}, ssim_s{"SSIM", {}, {}};
  for (const SweepPoint& p : points) {
    double wb = p.report.asr_per_model.at("substitute");
    sj.push_back({{"value", p.value},
                  {"run", p.run_hash},
                  {"blackbox_asr", p.report.blackbox_asr},
                  {"whitebox_asr", wb},
                  {"mean_ssim", p.report.mean_ssim},
                  {"mean_perceptual", p.report.mean_perceptual}});
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-10.4g %13.2f %13.2f %10.4f\n", p.value,
                  p.report.blackbox_asr, wb, p.report.mean_ssim);
    table << buf;
    asr_s.xs.push_back(p.value);
    asr_s.ys.push_back(p.report.blackbox_asr);
    ssim_s.xs.push_back(p.value);
    ssim_s.ys.push_back(p.report.mean_ssim);
  }
  write_text(sdir + "/summary.json", sj.dump(2) + "\n");
  write_text(sdir + "/summary.txt", table.str());
  if (points.size() > 1) {
    render_line_plot(sdir + "/asr_vs_" + parameter + ".png", "ASR SWEEP",
                     parameter, "BLACK-BOX ASR", {asr_s});
    render_line_plot(sdir + "/ssim_vs_" + parameter + ".png", "SSIM SWEEP",
                     parameter, "MEAN SSIM", {ssim_s});
  }
  return points;
}

std::vector<AblationCell> run_ablation_grid(const ExperimentConfig& base,
                                            const std::vector<AblationFlags>& grid) {
  std::vector<AblationCell> cells;
  for (const AblationFlags& flags : grid) {
    AblationCell cell;
    cell.flags = flags;
    try {
      ExperimentConfig c = base;
      c.attack.dual_path = flags.dual_path;
      c.attack.diffusion_aug = flags.diffusion_aug;
      c.attack.mode = flags.mode;
      c.attack.target = flags.target;
      c.validate();
      Pipeline sub(c);
      std::vector<std::string> ids = sub.benchmark_ids();
      if (c.attack.use_vca) sub.align(ids);
      sub.attack(ids);
      EvalReport rep = sub.evaluate();
      cell.whitebox_asr = rep.asr_per_model.at("substitute");
      cell.blackbox_asr = rep.blackbox_asr;
    } catch (const std::exception& e) {
      cell.failed = true;
      cell.error = e.what();
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

}  // namespace apa
