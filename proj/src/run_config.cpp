#include "painexpr/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "painexpr/errors.hpp"

namespace painexpr {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "run.seed",
      "data.dim", "data.frame_rate", "data.stack", "data.train_subjects", "data.val_subjects",
      "data.train_sequences", "data.val_sequences", "data.train_frames", "data.val_frames", "data.sigma_obs",
      "data.jaw_scale", "data.jaw_dims", "data.seed",
      "net.widths", "net.levels", "net.heads", "net.groups", "net.emb_dim", "net.cond_dim", "net.cond_tokens",
      "net.cond_hidden", "net.kernel",
      "edm.sigma_data", "edm.sigma_min", "edm.sigma_max", "edm.rho", "edm.p_mean", "edm.p_std",
      "train.seq_len", "train.batch_size", "train.steps", "train.warmup", "train.lr", "train.ema_decay",
      "train.dropout", "train.trim_prob", "train.beta1", "train.beta2", "train.weight_decay", "train.grad_clip",
      "train.noise_mode", "train.noise_levels", "train.seed",
      "sample.mode", "sample.window", "sample.horizon", "sample.steps", "sample.uncertainty", "sample.seq_len",
      "sample.samples", "sample.seed",
      "guidance.stimuli", "guidance.expr", "guidance.emotion",
      "eval.max_sequences",
      "ablate.context_window", "ablate.contexts", "ablate.uncertainties", "ablate.guidance"};
  return keys;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* b = text.data();
  const char* e = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return v;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (value.size() >= 2 && value.front() == '[' && value.back() == ']') value = value.substr(1, value.size() - 2);
    cfg.set(section.empty() ? key : section + "." + key, value);
  }
  cfg.check_known_keys();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

void RunConfig::check_known_keys() const {
  for (const auto& [k, v] : values_)
    if (!known_keys().count(k)) throw ConfigError("unknown config key '" + k + "'");
}

std::string RunConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int RunConfig::get_int(const std::string& key, int fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_number<int>(key, it->second);
}

std::uint64_t RunConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_number<std::uint64_t>(key, it->second);
}

double RunConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_number<double>(key, it->second);
}

std::vector<std::string> RunConfig::get_list(const std::string& key, const std::vector<std::string>& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<std::string> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.size() >= 2 && item.front() == '"' && item.back() == '"') item = item.substr(1, item.size() - 2);
    if (item.empty()) throw ConfigError("config key '" + key + "': empty list entry");
    out.push_back(item);
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

std::vector<int> RunConfig::get_int_list(const std::string& key, const std::vector<int>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<int> out;
  for (const auto& s : get_list(key, {})) out.push_back(parse_number<int>(key, s));
  return out;
}

DataGenConfig RunConfig::datagen() const {
  DataGenConfig c;
  c.dim = get_int("data.dim", c.dim);
  c.frame_rate = get_double("data.frame_rate", c.frame_rate);
  c.stack = get_int("data.stack", c.stack);
  c.train_subjects = get_int("data.train_subjects", c.train_subjects);
  c.val_subjects = get_int("data.val_subjects", c.val_subjects);
  c.train_sequences_per_subject = get_int("data.train_sequences", c.train_sequences_per_subject);
  c.val_sequences_per_subject = get_int("data.val_sequences", c.val_sequences_per_subject);
  c.train_frames = get_int("data.train_frames", c.train_frames);
  c.val_frames = get_int("data.val_frames", c.val_frames);
  c.sigma_obs = get_double("data.sigma_obs", c.sigma_obs);
  c.jaw_scale = get_double("data.jaw_scale", c.jaw_scale);
  c.jaw_dims = get_int("data.jaw_dims", c.jaw_dims);
  c.seed = get_u64("data.seed", get_u64("run.seed", c.seed));
  c.validate();
  return c;
}

NetConfig RunConfig::net(int dim, int stack) const {
  NetConfig c;
  c.dim = dim;
  c.stack = stack;
  c.widths = get_int_list("net.widths", c.widths);
  c.levels = get_int("net.levels", c.levels);
  c.heads = get_int("net.heads", c.heads);
  c.groups = get_int("net.groups", c.groups);
  c.emb_dim = get_int("net.emb_dim", c.emb_dim);
  c.cond_dim = get_int("net.cond_dim", c.cond_dim);
  c.cond_tokens = get_int("net.cond_tokens", c.cond_tokens);
  c.cond_hidden = get_int("net.cond_hidden", c.cond_hidden);
  c.kernel = get_int("net.kernel", c.kernel);
  c.validate();
  return c;
}

EdmParams RunConfig::edm() const {
  EdmParams p;
  p.sigma_data = get_double("edm.sigma_data", p.sigma_data);
  p.sigma_min = get_double("edm.sigma_min", p.sigma_min);
  p.sigma_max = get_double("edm.sigma_max", p.sigma_max);
  p.rho = get_double("edm.rho", p.rho);
  p.p_mean = get_double("edm.p_mean", p.p_mean);
  p.p_std = get_double("edm.p_std", p.p_std);
  p.validate();
  return p;
}

TrainConfig RunConfig::train() const {
  TrainConfig c;
  c.seq_len = get_int("train.seq_len", c.seq_len);
  c.batch_size = get_int("train.batch_size", c.batch_size);
  c.total_steps = get_int("train.steps", c.total_steps);
  c.warmup_steps = get_int("train.warmup", std::min(c.warmup_steps, c.total_steps));
  c.lr = get_double("train.lr", c.lr);
  c.ema_decay = get_double("train.ema_decay", c.ema_decay);
  c.dropout = get_double("train.dropout", c.dropout);
  c.trim_prob = get_double("train.trim_prob", c.trim_prob);
  c.beta1 = get_double("train.beta1", c.beta1);
  c.beta2 = get_double("train.beta2", c.beta2);
  c.weight_decay = get_double("train.weight_decay", c.weight_decay);
  c.grad_clip = get_double("train.grad_clip", c.grad_clip);
  c.noise_mode = parse_noise_mode(get_string("train.noise_mode", to_string(c.noise_mode)));
  c.noise_levels = get_int("train.noise_levels", c.noise_levels);
  c.seed = get_u64("train.seed", get_u64("run.seed", c.seed));
  c.validate();
  return c;
}

GuidanceWeights RunConfig::guidance() const {
  GuidanceWeights g;
  g.stimuli = get_double("guidance.stimuli", g.stimuli);
  g.expressiveness = get_double("guidance.expr", g.expressiveness);
  g.emotion = get_double("guidance.emotion", g.emotion);
  g.validate();
  return g;
}

RolloutOptions RunConfig::rollout(int dim, int stack, double frame_rate) const {
  RolloutOptions o;
  o.dim = dim;
  o.stack = stack;
  o.frame_rate = frame_rate;
  o.window_steps = get_int("sample.window", o.window_steps);
  o.horizon_steps = get_int("sample.horizon", o.horizon_steps);
  o.sampling_steps = get_int("sample.steps", o.sampling_steps);
  o.uncertainty = get_double("sample.uncertainty", o.uncertainty);
  o.guidance = guidance();
  o.edm = edm();
  o.validate();
  return o;
}

std::string RunConfig::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    const std::string section = dot == std::string::npos ? "" : k.substr(0, dot);
    const std::string name = dot == std::string::npos ? k : k.substr(dot + 1);
    j[section][name] = v;
  }
  return j.dump();
}

GuidanceWeights parse_guidance_triple(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, '_')) parts.push_back(parse_number<double>("guidance triple", trim(item)));
  if (parts.size() != 3) throw ConfigError("guidance triple '" + text + "' must have three '_'-separated values");
  GuidanceWeights g;
  g.emotion = parts[0];
  g.expressiveness = parts[1];
  g.stimuli = parts[2];
  g.validate();
  return g;
}

}  // namespace painexpr
