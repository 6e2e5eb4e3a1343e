#include "painexpr/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "painexpr/errors.hpp"
#include "painexpr/forcing.hpp"
#include "painexpr/guidance.hpp"

namespace painexpr {
namespace {

using nlohmann::json;

constexpr char kCheckpointMagic[4] = {'P', 'X', 'C', 'K'};
// Weight init draws from a stream no training step can reach.
constexpr std::uint64_t kInitStream = 0xFFFFFFFFFFFF0001ULL;

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return v;
}

void put_doubles(std::string& out, std::span<const double> values) {
  for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

}  // namespace

NoiseMode parse_noise_mode(const std::string& s) {
  if (s == "grid") return NoiseMode::kGrid;
  if (s == "lognormal") return NoiseMode::kLognormal;
  throw ConfigError("unknown noise mode '" + s + "' (expected grid or lognormal)");
}

std::string to_string(NoiseMode m) { return m == NoiseMode::kGrid ? "grid" : "lognormal"; }

void TrainConfig::validate() const {
  if (seq_len < 1) throw ConfigError("train: seq_len must be positive");
  if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
  if (total_steps < 0) throw ConfigError("train: total_steps must be non-negative");
  if (warmup_steps < 0 || warmup_steps > total_steps) throw ConfigError("train: need 0 <= warmup <= total steps");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("train: ema decay must lie in [0, 1)");
  if (!(dropout >= 0.0 && dropout <= 1.0)) throw ConfigError("train: dropout must lie in [0, 1]");
  if (!(trim_prob >= 0.0 && trim_prob <= 1.0)) throw ConfigError("train: trim_prob must lie in [0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must lie in [0, 1)");
  if (weight_decay < 0.0 || !(adam_eps > 0.0)) throw ConfigError("train: bad weight decay or eps");
  if (grad_clip < 0.0) throw ConfigError("train: grad_clip must be non-negative");
  if (noise_levels < 1) throw ConfigError("train: noise_levels must be >= 1");
}

std::string TrainConfig::to_json() const {
  json j{{"seq_len", seq_len},         {"batch_size", batch_size},     {"total_steps", total_steps},
         {"warmup_steps", warmup_steps}, {"lr", lr},                     {"ema_decay", ema_decay},
         {"dropout", dropout},           {"trim_prob", trim_prob},       {"beta1", beta1},
         {"beta2", beta2},               {"weight_decay", weight_decay}, {"adam_eps", adam_eps},
         {"grad_clip", grad_clip},       {"noise_mode", to_string(noise_mode)}, {"noise_levels", noise_levels},
         {"seed", seed}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    const json j = json::parse(text);
    c.seq_len = j.at("seq_len");
    c.batch_size = j.at("batch_size");
    c.total_steps = j.at("total_steps");
    c.warmup_steps = j.at("warmup_steps");
    c.lr = j.at("lr");
    c.ema_decay = j.at("ema_decay");
    c.dropout = j.at("dropout");
    c.trim_prob = j.at("trim_prob");
    c.beta1 = j.at("beta1");
    c.beta2 = j.at("beta2");
    c.weight_decay = j.at("weight_decay");
    c.adam_eps = j.at("adam_eps");
    c.grad_clip = j.at("grad_clip");
    c.noise_mode = parse_noise_mode(j.at("noise_mode").get<std::string>());
    c.noise_levels = j.at("noise_levels");
    c.seed = j.at("seed");
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed train config: ") + e.what());
  }
  return c;
}

std::string net_config_to_json(const NetConfig& c) {
  json j{{"dim", c.dim},         {"stack", c.stack},         {"widths", c.widths},
         {"levels", c.levels},   {"heads", c.heads},         {"groups", c.groups},
         {"emb_dim", c.emb_dim}, {"cond_dim", c.cond_dim},   {"cond_tokens", c.cond_tokens},
         {"cond_hidden", c.cond_hidden}, {"kernel", c.kernel}};
  return j.dump();
}

NetConfig net_config_from_json(const std::string& text) {
  NetConfig c;
  try {
    const json j = json::parse(text);
    c.dim = j.at("dim");
    c.stack = j.at("stack");
    c.widths = j.at("widths").get<std::vector<int>>();
    c.levels = j.at("levels");
    c.heads = j.at("heads");
    c.groups = j.at("groups");
    c.emb_dim = j.at("emb_dim");
    c.cond_dim = j.at("cond_dim");
    c.cond_tokens = j.at("cond_tokens");
    c.cond_hidden = j.at("cond_hidden");
    c.kernel = j.at("kernel");
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed net config: ") + e.what());
  }
  return c;
}

std::string edm_params_to_json(const EdmParams& p) {
  json j{{"sigma_data", p.sigma_data}, {"sigma_min", p.sigma_min}, {"sigma_max", p.sigma_max},
         {"rho", p.rho},               {"p_mean", p.p_mean},       {"p_std", p.p_std}};
  return j.dump();
}

EdmParams edm_params_from_json(const std::string& text) {
  EdmParams p;
  try {
    const json j = json::parse(text);
    p.sigma_data = j.at("sigma_data");
    p.sigma_min = j.at("sigma_min");
    p.sigma_max = j.at("sigma_max");
    p.rho = j.at("rho");
    p.p_mean = j.at("p_mean");
    p.p_std = j.at("p_std");
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed edm params: ") + e.what());
  }
  return p;
}

TrainState init_train_state(const NetConfig& net, const EdmParams& edm, const TrainConfig& config,
                            std::uint64_t manifest_hash) {
  net.validate();
  edm.validate();
  config.validate();
  if (config.seq_len % net.stack != 0) {
    throw ConfigError("train: seq_len " + std::to_string(config.seq_len) + " is not a multiple of the frame stack " +
                      std::to_string(net.stack) + " (remainder " + std::to_string(config.seq_len % net.stack) + ")");
  }
  TrainState s;
  s.net = net;
  s.edm = edm;
  s.config = config;
  Rng init(config.seed, kInitStream);
  s.weights = TemporalUNet::init_weights(net, init);
  s.ema = s.weights;
  s.adam_m.assign(s.weights.numel(), 0.0);
  s.adam_v.assign(s.weights.numel(), 0.0);
  s.manifest_hash = manifest_hash;
  return s;
}

double learning_rate_at(const TrainConfig& c, std::int64_t k) {
  if (c.warmup_steps == 0) return c.lr;
  return c.lr * static_cast<double>(std::min<std::int64_t>(k, c.warmup_steps)) / c.warmup_steps;
}

Rng step_rng(const TrainState& state) { return Rng(state.config.seed, static_cast<std::uint64_t>(state.step)); }

TrainBatch sample_train_batch(const TrainState& state, std::span<const SequenceRecord> sequences, Rng& rng) {
  const TrainConfig& c = state.config;
  const int steps = c.seq_len / state.net.stack;
  TrainBatch batch;
  SigmaGrid grid;
  if (c.noise_mode == NoiseMode::kGrid) grid = karras_grid(c.noise_levels, state.edm);
  for (int b = 0; b < c.batch_size; ++b) {
    TrainingWindow w = sample_training_window(sequences, c.seq_len, rng, c.trim_prob);
    batch.clean.push_back(stack_frames(w.latents, state.net.stack));
    batch.bundles.push_back(condition_dropout(w.bundle, c.dropout, rng));
    batch.window_ids.push_back(w.sequence);
    std::vector<double> sig(static_cast<std::size_t>(steps));
    if (c.noise_mode == NoiseMode::kGrid) {
      const auto idx = assign_training_noise(steps, c.noise_levels, rng);
      for (int t = 0; t < steps; ++t) sig[static_cast<std::size_t>(t)] = grid.sigma_at_index(idx[static_cast<std::size_t>(t)]);
    } else {
      sig = draw_lognormal_sigmas(1, steps, rng, state.edm).front();
    }
    batch.sigma.push_back(std::move(sig));
  }
  // A batch made only of clean steps carries no signal; noise one step.
  bool any = false;
  for (const auto& row : batch.sigma)
    for (double s : row) any = any || s > 0.0;
  if (!any) batch.sigma.front().front() = state.edm.sigma_min;
  return batch;
}

double loss_and_gradient(const NetConfig& net, const EdmParams& edm, const NetWeights& weights, const TrainBatch& batch,
                         Rng& noise_rng, std::vector<double>* gradient) {
  NoisedBatch nb = make_noised_batch(batch.clean, batch.sigma, noise_rng, edm);
  ag::Graph g;
  Binding binding(g, weights, gradient != nullptr);
  NetBatch in{nb.net_input, nb.c_noise, batch.bundles, 0};
  const ag::Var pred = TemporalUNet::forward(binding, net, in);
  ag::Tensor target(pred.shape());
  std::size_t off = 0;
  for (const auto& t : nb.target) {
    std::copy(t.data().begin(), t.data().end(), target.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += t.data().size();
  }
  const ag::Var loss = ag::weighted_mse(pred, target, nb.weights);
  if (gradient) {
    g.backward(loss);
    *gradient = binding.flat_gradients();
  }
  return loss.value().data[0];
}

StepResult apply_gradient(TrainState& state, std::span<const double> gradient, double loss) {
  const TrainConfig& c = state.config;
  std::vector<double> w = state.weights.flatten();
  if (gradient.size() != w.size()) throw ConfigError("gradient size does not match the weights");
  double norm = 0.0;
  for (double g : gradient) norm += g * g;
  norm = std::sqrt(norm);
  if (!std::isfinite(norm)) throw NumericFault("non-finite gradient norm at step " + std::to_string(state.step + 1));
  const double clip = (c.grad_clip > 0.0 && norm > c.grad_clip) ? c.grad_clip / norm : 1.0;

  const std::int64_t k = state.step + 1;
  const double lr = learning_rate_at(c, k);
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(k));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(k));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double g = gradient[i] * clip;
    state.adam_m[i] = c.beta1 * state.adam_m[i] + (1.0 - c.beta1) * g;
    state.adam_v[i] = c.beta2 * state.adam_v[i] + (1.0 - c.beta2) * g * g;
    const double mhat = state.adam_m[i] / bc1;
    const double vhat = state.adam_v[i] / bc2;
    w[i] -= lr * (mhat / (std::sqrt(vhat) + c.adam_eps) + c.weight_decay * w[i]);
  }
  state.weights.assign_flat(w);

  std::vector<double> shadow = state.ema.flatten();
  for (std::size_t i = 0; i < w.size(); ++i) shadow[i] = c.ema_decay * shadow[i] + (1.0 - c.ema_decay) * w[i];
  state.ema.assign_flat(shadow);
  state.step = k;
  return {loss, lr, norm};
}

StepResult train_step(TrainState& state, std::span<const SequenceRecord> sequences, Rng& rng) {
  const TrainBatch batch = sample_train_batch(state, sequences, rng);
  std::vector<double> grad;
  const double loss = loss_and_gradient(state.net, state.edm, state.weights, batch, rng, &grad);
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << state.step + 1 << " (batch sequences";
    for (int id : batch.window_ids) msg << ' ' << id;
    msg << "; sigma draws";
    for (const auto& row : batch.sigma)
      for (double s : row) msg << ' ' << format_double(s);
    msg << ')';
    throw NumericFault(msg.str());
  }
  return apply_gradient(state, grad, loss);
}

void train(TrainState& state, std::span<const SequenceRecord> sequences, std::int64_t steps, const TrainLogFn& log) {
  while (state.step < steps) {
    Rng rng = step_rng(state);
    const StepResult r = train_step(state, sequences, rng);
    if (log) log(state.step, r);
  }
}

std::string train_log_line(std::int64_t step, const StepResult& r) {
  json j{{"step", step}, {"loss", r.loss}, {"lr", r.lr}, {"grad_norm", r.grad_norm}};
  return j.dump();
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  json header{{"format_version", kCheckpointFormatVersion},
              {"step", state.step},
              {"manifest_hash", state.manifest_hash},
              {"net", json::parse(net_config_to_json(state.net))},
              {"edm", json::parse(edm_params_to_json(state.edm))},
              {"train", json::parse(state.config.to_json())},
              {"run_config", json::parse(state.run_config_json)},
              {"param_names", json::array()},
              {"param_shapes", json::array()}};
  for (std::size_t i = 0; i < state.weights.count(); ++i) {
    header["param_names"].push_back(state.weights.name(i));
    header["param_shapes"].push_back(state.weights.tensor(i).shape);
  }
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, 4);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((kCheckpointFormatVersion >> (8 * b)) & 0xFF));
  put_u64(out, text.size());
  out += text;
  put_doubles(out, state.weights.flatten());
  put_doubles(out, state.ema.flatten());
  put_doubles(out, state.adam_m);
  put_doubles(out, state.adam_v);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("failed writing checkpoint " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16 || std::memcmp(p, kCheckpointMagic, 4) != 0) throw DataError(path.string() + ": not a checkpoint");
  const std::uint32_t version = static_cast<std::uint32_t>(p[4]) | (static_cast<std::uint32_t>(p[5]) << 8) |
                                (static_cast<std::uint32_t>(p[6]) << 16) | (static_cast<std::uint32_t>(p[7]) << 24);
  if (version != kCheckpointFormatVersion) {
    throw DataError(path.string() + ": checkpoint version mismatch (file " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointFormatVersion) + ")");
  }
  const std::uint64_t len = get_u64(p + 8);
  if (bytes.size() < 16 + len) throw DataError(path.string() + ": truncated checkpoint header");
  TrainState s;
  json header;
  try {
    header = json::parse(bytes.substr(16, len));
    s.step = header.at("step");
    s.manifest_hash = header.at("manifest_hash");
    s.net = net_config_from_json(header.at("net").dump());
    s.edm = edm_params_from_json(header.at("edm").dump());
    s.config = TrainConfig::from_json(header.at("train").dump());
    s.run_config_json = header.at("run_config").dump();
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  s.net.validate();
  // Rebuild the parameter layout, then overwrite the values.
  Rng init(0, kInitStream);
  s.weights = TemporalUNet::init_weights(s.net, init);
  const auto names = header.at("param_names").get<std::vector<std::string>>();
  const auto shapes = header.at("param_shapes").get<std::vector<std::vector<int>>>();
  if (names.size() != s.weights.count()) throw DataError(path.string() + ": parameter count disagrees with the network");
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] != s.weights.name(i) || shapes[i] != s.weights.tensor(i).shape)
      throw DataError(path.string() + ": parameter '" + names[i] + "' disagrees with the network layout");
  const std::size_t n = s.weights.numel();
  if (bytes.size() != 16 + len + 4 * n * 8) throw DataError(path.string() + ": truncated or oversized checkpoint body");
  auto read_block = [&](std::size_t block) {
    std::vector<double> v(n);
    const unsigned char* base = p + 16 + len + block * n * 8;
    for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<double>(get_u64(base + i * 8));
    return v;
  };
  s.weights.assign_flat(read_block(0));
  s.ema = s.weights;
  s.ema.assign_flat(read_block(1));
  s.adam_m = read_block(2);
  s.adam_v = read_block(3);
  return s;
}

}  // namespace painexpr
