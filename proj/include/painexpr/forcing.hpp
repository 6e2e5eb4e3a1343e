#pragma once

#include <span>
#include <vector>

#include "painexpr/core.hpp"
#include "painexpr/edm.hpp"
#include "painexpr/guidance.hpp"
#include "painexpr/rng.hpp"

namespace painexpr {

/// Independent uniform noise index in {0, ..., K} per stacked step.
std::vector<int> assign_training_noise(int steps, int levels, Rng& rng);

/// Rows are denoising sweeps, columns are window steps; entries index a
/// SigmaGrid with 0 = clean and K = sigma_max.
class SchedulingMatrix {
 public:
  SchedulingMatrix(int sweeps, int width, int context, std::vector<int> entries);

  int sweeps() const { return sweeps_; }
  int width() const { return width_; }
  int context() const { return context_; }
  int new_columns() const { return width_ - context_; }
  int at(int row, int col) const { return entries_[static_cast<std::size_t>(row) * width_ + col]; }
  const std::vector<int>& entries() const { return entries_; }

  /// Column-monotone, zero terminal row, zero context columns, and rows
  /// never less noisy to the right.
  bool valid() const;

 private:
  int sweeps_;
  int width_;
  int context_;
  std::vector<int> entries_;
};

/// Staircase over the new columns: column j (0-based after the context)
/// waits floor(j * uncertainty * K / new_cols) sweeps before descending one
/// level per sweep. Larger uncertainty keeps later columns noisier for longer.
SchedulingMatrix build_scheduling_matrix(int window, int horizon, int levels, double uncertainty);

/// Same construction without the context > 0 requirement (first window).
SchedulingMatrix staircase_matrix(int window, int new_columns, int levels, double uncertainty);

/// Reaction delay: horizon frames over the frame rate.
double rollout_latency(const SchedulingMatrix& matrix, int stack, double frame_rate);

struct RolloutOptions {
  int window_steps = 8;    // W'
  int horizon_steps = 4;   // h'
  int sampling_steps = 35; // K
  double uncertainty = 1.0;
  GuidanceWeights guidance{};
  EdmParams edm{};
  int stack = 4;
  int dim = 8;
  double frame_rate = 25.0;

  void validate() const;
  int context_steps() const { return window_steps - horizon_steps; }
};

/// Sliding-window diffusion-forcing generator over a batch of independent
/// streams. Committed steps are never revisited.
class RolloutEngine {
 public:
  /// streams: per-stream expressiveness, emotion and null mask (stimuli ignored).
  /// seed: optional clean context (context_steps() steps) per stream; without
  /// it the first window generates all W' steps from noise.
  RolloutEngine(const Denoiser& denoiser, RolloutOptions options, std::vector<ConditionBundle> streams, Rng rng,
                std::vector<StackedSequence> seed = {});

  /// Stimulus frames (from frame 0) needed before the next advance().
  int frames_required() const;
  int committed_frames() const { return committed_steps_ * options_.stack; }
  int windows_run() const { return windows_; }
  const SchedulingMatrix& steady_matrix() const { return steady_; }

  /// Runs one window. stimuli[b] is stream b's track from frame 0; frames
  /// beyond its end are treated as null. Returns the newly committed frames
  /// of each stream, row-major [frames x dim].
  std::vector<std::vector<double>> advance(std::span<const std::vector<double>> stimuli);

 private:
  const Denoiser& denoiser_;
  RolloutOptions options_;
  std::vector<ConditionBundle> streams_;
  std::vector<Rng> rngs_;
  SigmaGrid grid_;
  SchedulingMatrix first_;
  SchedulingMatrix steady_;
  std::vector<std::vector<std::vector<double>>> history_;  // [stream][step] -> s*d values
  int seed_steps_ = 0;
  int committed_steps_ = 0;
  int windows_ = 0;
};

/// Generates exactly total_frames frames per bundle. Bundles must carry at
/// least total_frames stimuli.
std::vector<LatentSequence> rollout(const Denoiser& denoiser, const RolloutOptions& options,
                                    std::span<const ConditionBundle> bundles, int total_frames, Rng rng,
                                    std::vector<StackedSequence> seed = {});

/// Full-sequence diffusion: one shared sigma for all steps, K-step grid.
std::vector<LatentSequence> sample_full_sequence(const Denoiser& denoiser, const RolloutOptions& options,
                                                 std::span<const ConditionBundle> bundles, int frames, Rng rng);

}  // namespace painexpr
