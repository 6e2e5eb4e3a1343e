#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "painexpr/data.hpp"
#include "painexpr/edm.hpp"
#include "painexpr/net.hpp"
#include "painexpr/rng.hpp"

namespace painexpr {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

enum class NoiseMode {
  kGrid,       // per-step index uniform over {0..K} of a Karras grid; 0 is clean
  kLognormal,  // per-step ln sigma ~ N(p_mean, p_std^2)
};

NoiseMode parse_noise_mode(const std::string& s);
std::string to_string(NoiseMode m);

struct TrainConfig {
  int seq_len = 64;
  int batch_size = 8;
  int total_steps = 50000;
  int warmup_steps = 5000;
  double lr = 4e-4;
  double ema_decay = 0.999;
  double dropout = 0.1;
  double trim_prob = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double weight_decay = 1e-4;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // global norm; 0 disables
  NoiseMode noise_mode = NoiseMode::kGrid;
  int noise_levels = 35;  // K for grid mode
  std::uint64_t seed = 1;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct TrainState {
  NetConfig net;
  EdmParams edm;
  TrainConfig config;
  NetWeights weights;
  NetWeights ema;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::int64_t step = 0;
  std::uint64_t manifest_hash = 0;
  std::string run_config_json = "{}";
};

/// Fresh weights (EMA copy of them) and zeroed optimizer moments.
TrainState init_train_state(const NetConfig& net, const EdmParams& edm, const TrainConfig& config,
                            std::uint64_t manifest_hash = 0);

/// lr * min(k, warmup) / warmup for the 1-based step k.
double learning_rate_at(const TrainConfig& config, std::int64_t step_one_based);

struct TrainBatch {
  std::vector<StackedSequence> clean;
  std::vector<ConditionBundle> bundles;
  std::vector<std::vector<double>> sigma;
  std::vector<int> window_ids;  // source sequence per window
};

/// Windows, condition dropout and per-step noise levels for one step.
/// `sequences` hold standardized latents.
TrainBatch sample_train_batch(const TrainState& state, std::span<const SequenceRecord> sequences, Rng& rng);

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

/// Loss and flat gradient for a prepared batch with the given noise draw.
double loss_and_gradient(const NetConfig& net, const EdmParams& edm, const NetWeights& weights, const TrainBatch& batch,
                         Rng& noise_rng, std::vector<double>* gradient);

/// Adam moments, decoupled decay, warmup lr, EMA update; advances state.step.
StepResult apply_gradient(TrainState& state, std::span<const double> gradient, double loss);

/// One optimisation step on a fresh batch; throws NumericFault on a
/// non-finite loss with the batch and sigma draws in the message.
StepResult train_step(TrainState& state, std::span<const SequenceRecord> sequences, Rng& rng);

/// Per-step generator; training resumes exactly from any step.
Rng step_rng(const TrainState& state);

using TrainLogFn = std::function<void(std::int64_t step, const StepResult&)>;

/// Runs until state.step == steps.
void train(TrainState& state, std::span<const SequenceRecord> sequences, std::int64_t steps, const TrainLogFn& log = {});

std::string train_log_line(std::int64_t step, const StepResult& r);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

std::string net_config_to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const std::string& text);
std::string edm_params_to_json(const EdmParams& p);
EdmParams edm_params_from_json(const std::string& text);

}  // namespace painexpr
