#include "metoken/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "metoken/common.hpp"

namespace metoken::cli {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int64_t to_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("bad integer for " + key + ": '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  using VQ = codebook::VQConfig;
  if (key == "feature.rbf_count") feature.rbf_count = int(to_int(key, value));
  else if (key == "feature.rbf_min") feature.rbf_min = to_double(key, value);
  else if (key == "feature.rbf_max") feature.rbf_max = to_double(key, value);
  else if (key == "feature.noise_sigma") feature.noise_sigma = to_double(key, value);
  else if (key == "graph.d_s") graph.d_s = int(to_int(key, value));
  else if (key == "graph.d_r") graph.d_r = to_double(key, value);
  else if (key == "graph.k") graph.k = int(to_int(key, value));
  else if (key == "graph.k_hop") graph.k_hop = int(to_int(key, value));
  else if (key == "graph.strict_intersection") graph.strict_intersection = to_bool(key, value);
  else if (key == "vq.mode") {
    if (value == "ts") train.vq.mode = VQ::Mode::TemperatureScaled;
    else if (value == "vanilla") train.vq.mode = VQ::Mode::VanillaVQ;
    else throw ConfigError("vq.mode must be 'ts' or 'vanilla'");
  } else if (key == "vq.tau_u") train.vq.tau_u = to_double(key, value);
  else if (key == "vq.tau_v0") train.vq.tau_v0 = to_double(key, value);
  else if (key == "vq.tau_v_min") train.vq.tau_v_min = to_double(key, value);
  else if (key == "vq.anneal") {
    if (value == "exponential") train.vq.anneal = VQ::Anneal::Exponential;
    else if (value == "linear") train.vq.anneal = VQ::Anneal::Linear;
    else throw ConfigError("vq.anneal must be 'exponential' or 'linear'");
  } else if (key == "vq.anneal_rate") train.vq.anneal_rate = to_double(key, value);
  else if (key == "vq.anneal_total") train.vq.anneal_total = to_int(key, value);
  else if (key == "vq.alpha") train.vq.alpha = to_double(key, value);
  else if (key == "vq.beta") train.vq.beta = to_double(key, value);
  else if (key == "vq.masked_assign") train.vq.masked_assign = to_bool(key, value);
  else if (key == "model.d_h") train.d_h = int(to_int(key, value));
  else if (key == "model.sub_size") train.sub_size = int(to_int(key, value));
  else if (key == "model.num_classes") train.num_classes = int(to_int(key, value));
  else if (key == "model.recon_target") {
    if (value == "features") train.recon_target = model::TrainConfig::ReconTarget::Features;
    else if (value == "embedding") train.recon_target = model::TrainConfig::ReconTarget::Embedding;
    else throw ConfigError("model.recon_target must be 'features' or 'embedding'");
  } else if (key == "train.stage1_steps") train.stage1_steps = to_int(key, value);
  else if (key == "train.stage2_steps") train.stage2_steps = to_int(key, value);
  else if (key == "train.batch_proteins") train.batch_proteins = int(to_int(key, value));
  else if (key == "train.lr") train.lr = to_double(key, value);
  else if (key == "train.seed") train.seed = uint64_t(to_int(key, value));
  else if (key == "train.joint_finetune") train.joint_finetune = to_bool(key, value);
  else if (key == "train.lr_decay") train.lr_decay = to_bool(key, value);
  else if (key == "train.augment_noise") train.augment_noise = to_bool(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

std::string RunConfig::get(const std::string& key) const {
  using VQ = codebook::VQConfig;
  if (key == "feature.rbf_count") return std::to_string(feature.rbf_count);
  if (key == "feature.rbf_min") return fmt(feature.rbf_min);
  if (key == "feature.rbf_max") return fmt(feature.rbf_max);
  if (key == "feature.noise_sigma") return fmt(feature.noise_sigma);
  if (key == "graph.d_s") return std::to_string(graph.d_s);
  if (key == "graph.d_r") return fmt(graph.d_r);
  if (key == "graph.k") return std::to_string(graph.k);
  if (key == "graph.k_hop") return std::to_string(graph.k_hop);
  if (key == "graph.strict_intersection") return graph.strict_intersection ? "true" : "false";
  if (key == "vq.mode") return train.vq.mode == VQ::Mode::TemperatureScaled ? "ts" : "vanilla";
  if (key == "vq.tau_u") return fmt(train.vq.tau_u);
  if (key == "vq.tau_v0") return fmt(train.vq.tau_v0);
  if (key == "vq.tau_v_min") return fmt(train.vq.tau_v_min);
  if (key == "vq.anneal")
    return train.vq.anneal == VQ::Anneal::Exponential ? "exponential" : "linear";
  if (key == "vq.anneal_rate") return fmt(train.vq.anneal_rate);
  if (key == "vq.anneal_total") return std::to_string(train.vq.anneal_total);
  if (key == "vq.alpha") return fmt(train.vq.alpha);
  if (key == "vq.beta") return fmt(train.vq.beta);
  if (key == "vq.masked_assign") return train.vq.masked_assign ? "true" : "false";
  if (key == "model.d_h") return std::to_string(train.d_h);
  if (key == "model.sub_size") return std::to_string(train.sub_size);
  if (key == "model.num_classes") return std::to_string(train.num_classes);
  if (key == "model.recon_target")
    return train.recon_target == model::TrainConfig::ReconTarget::Features ? "features"
                                                                           : "embedding";
  if (key == "train.stage1_steps") return std::to_string(train.stage1_steps);
  if (key == "train.stage2_steps") return std::to_string(train.stage2_steps);
  if (key == "train.batch_proteins") return std::to_string(train.batch_proteins);
  if (key == "train.lr") return fmt(train.lr);
  if (key == "train.seed") return std::to_string(train.seed);
  if (key == "train.joint_finetune") return train.joint_finetune ? "true" : "false";
  if (key == "train.lr_decay") return train.lr_decay ? "true" : "false";
  if (key == "train.augment_noise") return train.augment_noise ? "true" : "false";
  throw ConfigError("unknown config key '" + key + "'");
}

const std::vector<std::pair<std::string, std::string>>& RunConfig::key_help() {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"feature.rbf_count", "RBF bank size (default 16)"},
      {"feature.rbf_min", "first RBF center, Angstrom (default 2.0)"},
      {"feature.rbf_max", "last RBF center, Angstrom (default 22.0)"},
      {"feature.noise_sigma", "coordinate noise stddev, Angstrom (default 0.0005)"},
      {"graph.d_s", "sequential edge cutoff (default 2)"},
      {"graph.d_r", "radius edge cutoff, Angstrom (default 10.0)"},
      {"graph.k", "spatial nearest neighbors (default 30)"},
      {"graph.k_hop", "micro-env hop count over K-nearest edges (default 1)"},
      {"graph.strict_intersection", "micro-env = conjunction of criteria (default false)"},
      {"vq.mode", "'ts' (temperature-scaled) or 'vanilla' (default ts)"},
      {"vq.tau_u", "uniform-loss temperature (default 0.1)"},
      {"vq.tau_v0", "initial assignment temperature (default 1.0)"},
      {"vq.tau_v_min", "assignment temperature floor (default 0.01)"},
      {"vq.anneal", "'exponential' or 'linear' (default exponential)"},
      {"vq.anneal_rate", "exponential decay per step; 0 derives from stage1 steps"},
      {"vq.anneal_total", "linear schedule length; 0 uses stage1 steps"},
      {"vq.alpha", "uniform-loss weight (default 0.1)"},
      {"vq.beta", "commitment weight, vanilla mode (default 0.25)"},
      {"vq.masked_assign", "restrict stage-1 assignment to the label's block (default false)"},
      {"model.d_h", "hidden width / token dimension (default 128)"},
      {"model.sub_size", "tokens per class (default 128)"},
      {"model.num_classes", "number of classes (default 26)"},
      {"model.recon_target", "'features' or 'embedding' (default features)"},
      {"train.stage1_steps", "codebook training steps (default 2000)"},
      {"train.stage2_steps", "predictor training steps (default 2000)"},
      {"train.batch_proteins", "proteins per step (default 2)"},
      {"train.lr", "Adam learning rate (default 0.001)"},
      {"train.seed", "run seed (default 1)"},
      {"train.joint_finetune", "unfreeze codebook in stage 2 (default false)"},
      {"train.lr_decay", "linear lr decay to 10% over each stage (default false)"},
      {"train.augment_noise", "apply coordinate noise per training batch (default false)"},
  };
  return keys;
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

void RunConfig::validate() const {
  feature.validate();
  graph.validate();
  train.validate();
}

uint64_t RunConfig::hash() const {
  std::string canonical;
  for (const auto& [key, help] : key_help()) {
    canonical += key;
    canonical += '=';
    canonical += get(key);
    canonical += '\n';
  }
  return fnv1a(canonical);
}

}  // namespace metoken::cli
