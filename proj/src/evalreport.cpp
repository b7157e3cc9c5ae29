#include "apa/evalreport.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace apa {

using nlohmann::json;

void EvalReport::recompute_aggregates() {
  if (records.empty()) throw std::invalid_argument("EvalReport: no records");
  asr_per_model.clear();
  for (const std::string& m : model_names) {
    int miss = 0;
    for (const PerImageRecord& r : records)
      if (r.predictions.at(m) != r.label) ++miss;
    asr_per_model[m] =
        100.0 * static_cast<double>(miss) / static_cast<double>(records.size());
  }
  double s = 0.0, p = 0.0;
  for (const PerImageRecord& r : records) {
    s += r.ssim;
    p += r.perceptual;
  }
  mean_ssim = s / static_cast<double>(records.size());
  mean_perceptual = p / static_cast<double>(records.size());
  double bb = 0.0;
  int bb_n = 0;
  for (const std::string& m : model_names) {
    if (m == "substitute") continue;
    bb += asr_per_model.at(m);
    ++bb_n;
  }
  blackbox_asr = bb_n ? bb / bb_n : 0.0;
}

void EvalReport::check_consistency() const {
  EvalReport copy = *this;
  copy.recompute_aggregates();
  auto close = [](double a, double b) { return std::fabs(a - b) < 1e-9; };
  for (const auto& [m, v] : asr_per_model)
    if (!close(copy.asr_per_model.at(m), v))
      throw std::logic_error("EvalReport: ASR aggregate mismatch for " + m);
  if (!close(copy.mean_ssim, mean_ssim) ||
      !close(copy.mean_perceptual, mean_perceptual) ||
      !close(copy.blackbox_asr, blackbox_asr))
    throw std::logic_error("EvalReport: aggregate mismatch");
}

json EvalReport::to_json() const {
  json recs = json::array();
  for (const PerImageRecord& r : records) {
    json pj = json::object();
    for (const auto& [m, p] : r.predictions) pj[m] = p;
    recs.push_back({{"id", r.id},
                    {"label", r.label},
                    {"predictions", pj},
                    {"ssim", r.ssim},
                    {"perceptual", r.perceptual},
                    {"whitebox_flag", r.whitebox_flag}});
  }
  json asr = json::object();
  for (const auto& [m, v] : asr_per_model) asr[m] = v;
  return json{{"config_hash", config_hash},
              {"run_id", run_id},
              {"model_names", model_names},
              {"asr_per_model", asr},
              {"blackbox_asr", blackbox_asr},
              {"mean_ssim", mean_ssim},
              {"mean_perceptual", mean_perceptual},
              {"records", recs}};
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.run_id = j.value("run_id", "");
  r.model_names = j.at("model_names").get<std::vector<std::string>>();
  for (auto& [m, v] : j.at("asr_per_model").items())
    r.asr_per_model[m] = v.get<double>();
  r.blackbox_asr = j.at("blackbox_asr").get<double>();
  r.mean_ssim = j.at("mean_ssim").get<double>();
  r.mean_perceptual = j.at("mean_perceptual").get<double>();
  for (const json& rec : j.at("records")) {
    PerImageRecord pr;
    pr.id = rec.at("id").get<std::string>();
    pr.label = rec.at("label").get<int>();
    for (auto& [m, p] : rec.at("predictions").items())
      pr.predictions[m] = p.get<int>();
    pr.ssim = rec.at("ssim").get<double>();
    pr.perceptual = rec.at("perceptual").get<double>();
    pr.whitebox_flag = rec.at("whitebox_flag").get<bool>();
    r.records.push_back(std::move(pr));
  }
  return r;
}

std::string EvalReport::text_table() const {
  std::ostringstream os;
  os << "run " << run_id << "  (config " << config_hash << ")\n";
  os << "images: " << records.size() << "\n\n";
  os << "model            ASR(%)\n";
  os << "-----------------------\n";
  for (const std::string& m : model_names) {
    std::string label = m == "substitute" ? m + " *" : m;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-16s %6.2f\n", label.c_str(),
                  asr_per_model.at(m));
    os << buf;
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "\nblack-box avg ASR %6.2f\nmean SSIM %8.4f\nmean "
                "perceptual %8.6f\n",
                blackbox_asr, mean_ssim, mean_perceptual);
  os << buf << "(* white-box substitute)\n";
  return os.str();
}

std::string EvalReport::csv() const {
  std::ostringstream os;
  os << "id,label";
  for (const std::string& m : model_names) os << ",pred_" << m;
  os << ",ssim,perceptual,whitebox_flag\n";
  for (const PerImageRecord& r : records) {
    os << r.id << "," << r.label;
    for (const std::string& m : model_names) os << "," << r.predictions.at(m);
    char buf[64];
    std::snprintf(buf, sizeof(buf), ",%.9g,%.9g,%d\n", r.ssim, r.perceptual,
                  r.whitebox_flag ? 1 : 0);
    os << buf;
  }
  return os.str();
}

std::string AblationFlags::name() const {
  std::ostringstream os;
  os << (target == AttackConfig::Target::latent ? "L" : "P") << "/"
     << (dual_path ? "dual" : "-") << "/" << (diffusion_aug ? "aug" : "-") << "/"
     << (mode == AttackConfig::Mode::SG ? "SG" : "GC");
  return os.str();
}

json ablation_to_json(const std::vector<AblationCell>& cells) {
  json out = json::array();
  for (const AblationCell& c : cells)
    out.push_back({{"name", c.flags.name()},
                   {"dual_path", c.flags.dual_path},
                   {"diffusion_aug", c.flags.diffusion_aug},
                   {"mode", c.flags.mode == AttackConfig::Mode::SG ? "sg" : "gc"},
                   {"target", c.flags.target == AttackConfig::Target::latent
                                  ? "latent"
                                  : "conditioning"},
                   {"whitebox_asr", c.whitebox_asr},
                   {"blackbox_asr", c.blackbox_asr},
                   {"failed", c.failed},
                   {"error", c.error}});
  return out;
}

std::string ablation_table(const std::vector<AblationCell>& cells) {
  std::ostringstream os;
  os << "cell             white-box  black-box\n";
  os << "-------------------------------------\n";
  for (const AblationCell& c : cells) {
    char buf[96];
    if (c.failed)
      std::snprintf(buf, sizeof(buf), "%-16s FAILED: %s\n",
                    c.flags.name().c_str(), c.error.c_str());
    else
      std::snprintf(buf, sizeof(buf), "%-16s %9.2f %10.2f\n",
                    c.flags.name().c_str(), c.whitebox_asr, c.blackbox_asr);
    os << buf;
  }
  return os.str();
}

}  // namespace apa
