#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "painexpr/autograd.hpp"
#include "painexpr/core.hpp"
#include "painexpr/rng.hpp"

namespace painexpr {

struct NetConfig {
  int dim = 8;                   // latent dimension d (spatial axis)
  int stack = 4;                 // frames per stacked step s (input channels)
  std::vector<int> widths{16};   // channel width per resolution level
  int levels = 1;                // number of down/up levels
  int heads = 2;
  int groups = 4;                // group-norm groups (reduced to gcd with width)
  int emb_dim = 32;              // noise and temporal embedding width
  int cond_dim = 16;             // condition token width
  int cond_tokens = 4;           // condition tokens per stacked step
  int cond_hidden = 32;
  int kernel = 3;

  void validate() const;
  int width_at(int level) const;
  int mid_width() const { return widths.back(); }
};

/// Named parameter tensors in creation order.
class ParamSet {
 public:
  std::size_t count() const { return tensors_.size(); }
  std::size_t numel() const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index(const std::string& name) const;
  const std::string& name(std::size_t i) const { return names_[i]; }
  ag::Tensor& tensor(std::size_t i) { return tensors_[i]; }
  const ag::Tensor& tensor(std::size_t i) const { return tensors_[i]; }
  ag::Tensor& operator[](const std::string& name) { return tensors_[index(name)]; }
  const ag::Tensor& operator[](const std::string& name) const { return tensors_[index(name)]; }

  std::size_t add(std::string name, ag::Tensor value);

  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);

  bool operator==(const ParamSet&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<ag::Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

using NetWeights = ParamSet;

enum class Init { kFanIn, kZeros, kOnes, kNormal };

/// Binds a ParamSet onto a graph, creating missing parameters when an init
/// generator is supplied.
class Binding {
 public:
  Binding(ag::Graph& graph, const ParamSet& params, bool trainable);
  Binding(ag::Graph& graph, ParamSet& params, Rng& init_rng);

  ag::Graph& graph() { return graph_; }
  ag::Var get(const std::string& name, const std::vector<int>& shape, Init init);

  /// Gradients in ParamSet order, flattened; zeros for unbound parameters.
  std::vector<double> flat_gradients() const;

 private:
  ag::Graph& graph_;
  const ParamSet* params_;
  ParamSet* creating_ = nullptr;
  Rng* init_rng_ = nullptr;
  bool trainable_;
  std::map<std::size_t, ag::Var> bound_;
};

// Building blocks. Feature maps are [N, C, D] with N = batch * steps.

/// Condition tokens [N, cond_tokens, cond_dim] for every stacked step of
/// every window; each bundle must carry steps * stack stimulus frames.
ag::Var encode_conditions(Binding& b, const NetConfig& cfg, std::span<const ConditionBundle> bundles, int steps);

/// Two 1D convolutions with group norm + SiLU, scale/shift from the noise
/// embedding in between, residual skip (1x1 projection on width change).
ag::Var resnet_block(Binding& b, const NetConfig& cfg, const std::string& prefix, ag::Var x, ag::Var noise_emb,
                     int out_channels);

/// Self-attention across the d spatial positions of each frame, then
/// cross-attention to that frame's condition tokens.
ag::Var spatial_attention(Binding& b, const NetConfig& cfg, const std::string& prefix, ag::Var x, ag::Var cond);

/// Features modulated by the step embedding, then full attention across the
/// steps of each window, independently per (window, spatial position).
ag::Var temporal_attention(Binding& b, const NetConfig& cfg, const std::string& prefix, ag::Var x, ag::Var step_emb,
                           int batch, int steps);

/// Sinusoidal rows -> Linear -> SiLU -> Linear.
ag::Var embedding_mlp(Binding& b, const std::string& prefix, const std::vector<double>& positions, int emb_dim);

/// One network evaluation request: B windows of equal step count.
struct NetBatch {
  std::vector<StackedSequence> inputs;       // already scaled by c_in
  std::vector<std::vector<double>> c_noise;  // [B][steps]
  std::vector<ConditionBundle> bundles;      // stimuli cover steps * stack frames
  int t0 = 0;                                // position of step 0 for the temporal embedding

  int batch() const { return static_cast<int>(inputs.size()); }
  int steps() const { return inputs.empty() ? 0 : inputs.front().steps(); }
};

/// Raw network F(c_in z, c_noise, C).
class RawModel {
 public:
  virtual ~RawModel() = default;
  virtual std::vector<StackedSequence> evaluate(const NetBatch& batch) const = 0;
};

class TemporalUNet : public RawModel {
 public:
  TemporalUNet(NetConfig cfg, NetWeights weights);

  /// Fresh weights: variance scaling, zeros for residual-branch outputs.
  static NetWeights init_weights(const NetConfig& cfg, Rng& rng);

  const NetConfig& config() const { return cfg_; }
  const NetWeights& weights() const { return weights_; }
  NetWeights& weights() { return weights_; }

  /// Records the forward pass; output is [B * steps, stack, dim].
  ag::Var forward(Binding& b, const NetBatch& batch) const;
  std::vector<StackedSequence> evaluate(const NetBatch& batch) const override;

  static ag::Var forward(Binding& b, const NetConfig& cfg, const NetBatch& batch);

 private:
  NetConfig cfg_;
  NetWeights weights_;
};

}  // namespace painexpr
