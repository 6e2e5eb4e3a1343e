#include "painexpr/net.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "painexpr/errors.hpp"

namespace painexpr {
namespace {

using ag::Tensor;
using ag::Var;

int effective_groups(const NetConfig& cfg, int channels) { return std::gcd(std::max(cfg.groups, 1), channels); }
int effective_heads(const NetConfig& cfg, int channels) { return std::gcd(std::max(cfg.heads, 1), channels); }

Var norm(Binding& b, const NetConfig& cfg, const std::string& name, Var x) {
  const int ch = x.shape()[1];
  return ag::group_norm(x, b.get(name + ".g", {ch}, Init::kOnes), b.get(name + ".b", {ch}, Init::kZeros),
                        effective_groups(cfg, ch));
}

Var dense(Binding& b, const std::string& name, Var x, int out, Init init = Init::kFanIn) {
  const int in = x.shape().back();
  return ag::linear(x, b.get(name + ".w", {out, in}, init), b.get(name + ".b", {out}, Init::kZeros));
}

Var conv(Binding& b, const std::string& name, Var x, int out, int kernel, int stride, Init init = Init::kFanIn) {
  const int in = x.shape()[1];
  return ag::conv1d(x, b.get(name + ".w", {out, in, kernel}, init), b.get(name + ".b", {out}, Init::kZeros), stride,
                    kernel / 2);
}

}  // namespace

void NetConfig::validate() const {
  if (dim < 1 || stack < 1) throw ConfigError("net: dim and stack must be positive");
  if (widths.empty()) throw ConfigError("net: widths must be non-empty");
  for (int w : widths)
    if (w < 1) throw ConfigError("net: widths must be positive");
  if (levels < 0) throw ConfigError("net: levels must be non-negative");
  if (emb_dim < 2 || emb_dim % 2 != 0) throw ConfigError("net: emb_dim must be even and >= 2");
  if (cond_dim < 1 || cond_tokens < 1 || cond_hidden < 1) throw ConfigError("net: condition encoder sizes must be positive");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("net: kernel must be odd");
  int len = dim;
  for (int l = 0; l < levels; ++l) len = (len + 1) / 2;
  if (len < 1) throw ConfigError("net: spatial axis vanishes after downsampling");
}

int NetConfig::width_at(int level) const {
  return widths[static_cast<std::size_t>(std::min<int>(level, static_cast<int>(widths.size()) - 1))];
}

std::size_t ParamSet::numel() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

std::size_t ParamSet::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamSet::add(std::string name, ag::Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_[name] = tensors_.size();
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
  return tensors_.size() - 1;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(numel());
  for (const auto& t : tensors_) flat.insert(flat.end(), t.data.begin(), t.data.end());
  return flat;
}

void ParamSet::assign_flat(std::span<const double> flat) {
  if (flat.size() != numel()) throw DataError("flat parameter vector has wrong length");
  std::size_t off = 0;
  for (auto& t : tensors_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.data.begin());
    off += t.size();
  }
}

Binding::Binding(ag::Graph& graph, const ParamSet& params, bool trainable)
    : graph_(graph), params_(&params), trainable_(trainable) {}

Binding::Binding(ag::Graph& graph, ParamSet& params, Rng& init_rng)
    : graph_(graph), params_(&params), creating_(&params), init_rng_(&init_rng), trainable_(false) {}

ag::Var Binding::get(const std::string& name, const std::vector<int>& shape, Init init) {
  if (creating_ && !creating_->contains(name)) {
    Tensor t(shape);
    const std::size_t fan_in = ag::shape_size(shape) / static_cast<std::size_t>(shape.front());
    for (auto& v : t.data) {
      switch (init) {
        case Init::kFanIn: v = init_rng_->normal() / std::sqrt(static_cast<double>(fan_in)); break;
        case Init::kZeros: v = 0.0; break;
        case Init::kOnes: v = 1.0; break;
        case Init::kNormal: v = init_rng_->normal(); break;
      }
    }
    creating_->add(name, std::move(t));
  }
  const std::size_t idx = params_->index(name);
  auto it = bound_.find(idx);
  if (it != bound_.end()) return it->second;
  const Tensor& value = params_->tensor(idx);
  if (value.shape != shape) throw DataError("parameter '" + name + "' has unexpected shape");
  Var v = trainable_ ? graph_.leaf(value) : graph_.constant(value);
  bound_.emplace(idx, v);
  return v;
}

std::vector<double> Binding::flat_gradients() const {
  std::vector<double> flat;
  flat.reserve(params_->numel());
  for (std::size_t i = 0; i < params_->count(); ++i) {
    auto it = bound_.find(i);
    if (it == bound_.end()) {
      flat.insert(flat.end(), params_->tensor(i).size(), 0.0);
    } else {
      const auto g = graph_.grad(it->second);
      flat.insert(flat.end(), g.begin(), g.end());
    }
  }
  return flat;
}

Var embedding_mlp(Binding& b, const std::string& prefix, const std::vector<double>& positions, int emb_dim) {
  const int n = static_cast<int>(positions.size());
  Tensor rows({n, emb_dim});
  for (int i = 0; i < n; ++i) {
    const auto e = sinusoidal_embed(positions[i], emb_dim);
    std::copy(e.begin(), e.end(), rows.data.begin() + static_cast<std::ptrdiff_t>(i) * emb_dim);
  }
  Var h = b.graph().constant(std::move(rows));
  h = ag::silu(dense(b, prefix + ".fc1", h, emb_dim));
  return dense(b, prefix + ".fc2", h, emb_dim);
}

Var encode_conditions(Binding& b, const NetConfig& cfg, std::span<const ConditionBundle> bundles, int steps) {
  const int s = cfg.stack;
  const int width = s + 2;
  const int n = static_cast<int>(bundles.size()) * steps;
  Tensor values({n, width});
  std::vector<std::uint8_t> mask(values.size(), 0);
  for (std::size_t bi = 0; bi < bundles.size(); ++bi) {
    const auto& bundle = bundles[bi];
    if (bundle.stimuli.size() != static_cast<std::size_t>(steps) * s) {
      throw ConfigError("condition stimuli length " + std::to_string(bundle.stimuli.size()) + " does not match " +
                        std::to_string(steps) + " steps x stack " + std::to_string(s));
    }
    for (int t = 0; t < steps; ++t) {
      const std::size_t row = (bi * steps + t) * width;
      for (int j = 0; j < s; ++j) {
        const double v = bundle.stimuli[static_cast<std::size_t>(t) * s + j];
        const bool null = bundle.is_null(Condition::kStimuli) || is_null_stimulus(v);
        values.data[row + j] = null ? 0.0 : v;
        mask[row + j] = null;
      }
      values.data[row + s] = bundle.is_null(Condition::kExpressiveness) ? 0.0 : bundle.expressiveness;
      mask[row + s] = bundle.is_null(Condition::kExpressiveness);
      values.data[row + s + 1] = bundle.is_null(Condition::kEmotion) ? 0.0 : bundle.emotion;
      mask[row + s + 1] = bundle.is_null(Condition::kEmotion);
    }
  }
  Var v = ag::replace_masked(values, mask, b.get("cond.null", {width}, Init::kNormal));
  Var h = ag::silu(dense(b, "cond.fc1", v, cfg.cond_hidden));
  h = dense(b, "cond.fc2", h, cfg.cond_tokens * cfg.cond_dim);
  return ag::reshape(h, {n, cfg.cond_tokens, cfg.cond_dim});
}

Var resnet_block(Binding& b, const NetConfig& cfg, const std::string& prefix, Var x, Var noise_emb, int out_channels) {
  const int in_channels = x.shape()[1];
  Var h = ag::silu(norm(b, cfg, prefix + ".norm1", x));
  h = conv(b, prefix + ".conv1", h, out_channels, cfg.kernel, 1);
  Var ss = dense(b, prefix + ".emb", ag::silu(noise_emb), 2 * out_channels);
  h = ag::modulate(norm(b, cfg, prefix + ".norm2", h), ss);
  h = conv(b, prefix + ".conv2", ag::silu(h), out_channels, cfg.kernel, 1, Init::kZeros);
  Var skip = in_channels == out_channels ? x : conv(b, prefix + ".skip", x, out_channels, 1, 1);
  return ag::add(skip, h);
}

Var spatial_attention(Binding& b, const NetConfig& cfg, const std::string& prefix, Var x, Var cond) {
  const int ch = x.shape()[1];
  const int heads = effective_heads(cfg, ch);

  Var tokens = ag::permute(norm(b, cfg, prefix + ".norm1", x), {0, 2, 1});
  Var a = ag::attention(dense(b, prefix + ".q", tokens, ch), dense(b, prefix + ".k", tokens, ch),
                        dense(b, prefix + ".v", tokens, ch), heads);
  a = dense(b, prefix + ".o", a, ch, Init::kZeros);
  x = ag::add(x, ag::permute(a, {0, 2, 1}));

  tokens = ag::permute(norm(b, cfg, prefix + ".norm2", x), {0, 2, 1});
  Var c = ag::attention(dense(b, prefix + ".xq", tokens, ch), dense(b, prefix + ".xk", cond, ch),
                        dense(b, prefix + ".xv", cond, ch), heads);
  c = dense(b, prefix + ".xo", c, ch, Init::kZeros);
  return ag::add(x, ag::permute(c, {0, 2, 1}));
}

Var temporal_attention(Binding& b, const NetConfig& cfg, const std::string& prefix, Var x, Var step_emb, int batch,
                       int steps) {
  const int ch = x.shape()[1];
  const int len = x.shape()[2];
  const int heads = effective_heads(cfg, ch);

  Var h = norm(b, cfg, prefix + ".norm", x);
  h = ag::modulate(h, dense(b, prefix + ".mod", ag::silu(step_emb), 2 * ch));
  // [B*T', C, D] -> [B*D, T', C]
  Var tokens = ag::reshape(ag::permute(ag::reshape(h, {batch, steps, ch, len}), {0, 3, 1, 2}), {batch * len, steps, ch});
  Var a = ag::attention(dense(b, prefix + ".q", tokens, ch), dense(b, prefix + ".k", tokens, ch),
                        dense(b, prefix + ".v", tokens, ch), heads);
  a = dense(b, prefix + ".o", a, ch, Init::kZeros);
  Var back = ag::reshape(ag::permute(ag::reshape(a, {batch, len, steps, ch}), {0, 2, 3, 1}), {batch * steps, ch, len});
  return ag::add(x, back);
}

TemporalUNet::TemporalUNet(NetConfig cfg, NetWeights weights) : cfg_(std::move(cfg)), weights_(std::move(weights)) {
  cfg_.validate();
}

NetWeights TemporalUNet::init_weights(const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  NetWeights w;
  ag::Graph g;
  Binding b(g, w, rng);
  NetBatch dummy;
  dummy.inputs.emplace_back(1, cfg.stack, cfg.dim);
  dummy.c_noise.push_back({0.0});
  ConditionBundle bundle;
  bundle.stimuli.assign(static_cast<std::size_t>(cfg.stack), 0.0);
  dummy.bundles.push_back(bundle);
  forward(b, cfg, dummy);
  return w;
}

Var TemporalUNet::forward(Binding& b, const NetBatch& batch) const { return forward(b, cfg_, batch); }

Var TemporalUNet::forward(Binding& b, const NetConfig& cfg, const NetBatch& batch) {
  const int nb = batch.batch();
  const int steps = batch.steps();
  if (nb < 1 || steps < 1) throw ConfigError("net: empty batch");
  if (static_cast<int>(batch.c_noise.size()) != nb || static_cast<int>(batch.bundles.size()) != nb)
    throw ConfigError("net: batch components disagree in size");
  const int n = nb * steps;
  Tensor x({n, cfg.stack, cfg.dim});
  std::vector<double> noise_pos, time_pos;
  noise_pos.reserve(static_cast<std::size_t>(n));
  time_pos.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < nb; ++i) {
    const auto& z = batch.inputs[static_cast<std::size_t>(i)];
    if (z.steps() != steps || z.stack() != cfg.stack || z.dim() != cfg.dim)
      throw ConfigError("net: window shape does not match the network configuration");
    if (static_cast<int>(batch.c_noise[static_cast<std::size_t>(i)].size()) != steps)
      throw ConfigError("net: c_noise needs one level per step");
    std::copy(z.data().begin(), z.data().end(), x.data.begin() + static_cast<std::ptrdiff_t>(i) * steps * cfg.stack * cfg.dim);
    for (int t = 0; t < steps; ++t) {
      noise_pos.push_back(batch.c_noise[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)]);
      time_pos.push_back(static_cast<double>(batch.t0 + t));
    }
  }

  ag::Graph& g = b.graph();
  Var h = g.constant(std::move(x));
  Var noise_emb = embedding_mlp(b, "emb.noise", noise_pos, cfg.emb_dim);
  Var time_emb = embedding_mlp(b, "emb.time", time_pos, cfg.emb_dim);
  Var step_emb = ag::add(noise_emb, time_emb);
  Var cond = encode_conditions(b, cfg, batch.bundles, steps);

  h = conv(b, "in", h, cfg.width_at(0), cfg.kernel, 1);
  std::vector<Var> skips;
  for (int l = 0; l < cfg.levels; ++l) {
    const std::string p = "down" + std::to_string(l);
    h = resnet_block(b, cfg, p + ".res", h, noise_emb, cfg.width_at(l));
    h = spatial_attention(b, cfg, p + ".sattn", h, cond);
    h = temporal_attention(b, cfg, p + ".tattn", h, step_emb, nb, steps);
    skips.push_back(h);
    const int next = l + 1 < cfg.levels ? cfg.width_at(l + 1) : cfg.mid_width();
    h = conv(b, p + ".ds", h, next, cfg.kernel, 2);
  }
  h = resnet_block(b, cfg, "mid.res", h, noise_emb, cfg.mid_width());
  h = spatial_attention(b, cfg, "mid.sattn", h, cond);
  h = temporal_attention(b, cfg, "mid.tattn", h, step_emb, nb, steps);
  for (int l = cfg.levels - 1; l >= 0; --l) {
    const std::string p = "up" + std::to_string(l);
    const Var skip = skips[static_cast<std::size_t>(l)];
    h = ag::crop_last(ag::upsample2_last(h), skip.shape()[2]);
    h = conv(b, p + ".us", h, cfg.width_at(l), cfg.kernel, 1);
    h = ag::concat_channels(h, skip);
    h = resnet_block(b, cfg, p + ".res", h, noise_emb, cfg.width_at(l));
    h = spatial_attention(b, cfg, p + ".sattn", h, cond);
    h = temporal_attention(b, cfg, p + ".tattn", h, step_emb, nb, steps);
  }
  h = ag::silu(norm(b, cfg, "out.norm", h));
  return conv(b, "out", h, cfg.stack, cfg.kernel, 1, Init::kZeros);
}

std::vector<StackedSequence> TemporalUNet::evaluate(const NetBatch& batch) const {
  ag::Graph g;
  Binding b(g, weights_, false);
  const Var out = forward(b, batch);
  const auto& data = out.value().data;
  const int steps = batch.steps();
  const std::size_t per = static_cast<std::size_t>(steps) * cfg_.stack * cfg_.dim;
  std::vector<StackedSequence> result;
  result.reserve(batch.inputs.size());
  for (std::size_t i = 0; i < batch.inputs.size(); ++i) {
    result.emplace_back(steps, cfg_.stack, cfg_.dim,
                        std::vector<double>(data.begin() + static_cast<std::ptrdiff_t>(i * per),
                                            data.begin() + static_cast<std::ptrdiff_t>((i + 1) * per)));
  }
  return result;
}

}  // namespace painexpr
