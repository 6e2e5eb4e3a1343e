#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace painexpr {

/// T x d latent expression track, one row per frame, row-major.
class LatentSequence {
 public:
  LatentSequence() = default;
  LatentSequence(int frames, int dim, double frame_rate = 25.0);
  LatentSequence(int frames, int dim, std::vector<double> data, double frame_rate = 25.0);

  int frames() const { return frames_; }
  int dim() const { return dim_; }
  double frame_rate() const { return frame_rate_; }

  double& at(int t, int k) { return data_[static_cast<std::size_t>(t) * dim_ + k]; }
  double at(int t, int k) const { return data_[static_cast<std::size_t>(t) * dim_ + k]; }
  std::span<double> row(int t) { return {data_.data() + static_cast<std::size_t>(t) * dim_, static_cast<std::size_t>(dim_)}; }
  std::span<const double> row(int t) const {
    return {data_.data() + static_cast<std::size_t>(t) * dim_, static_cast<std::size_t>(dim_)};
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  /// Frames [start, start + length).
  LatentSequence slice(int start, int length) const;

  bool operator==(const LatentSequence&) const = default;

 private:
  int frames_ = 0;
  int dim_ = 0;
  double frame_rate_ = 25.0;
  std::vector<double> data_;
};

/// T' x s x d view of a latent track with s consecutive frames per step.
/// Memory layout is identical to the unstacked row-major track.
class StackedSequence {
 public:
  StackedSequence() = default;
  StackedSequence(int steps, int stack, int dim);
  StackedSequence(int steps, int stack, int dim, std::vector<double> data);

  int steps() const { return steps_; }
  int stack() const { return stack_; }
  int dim() const { return dim_; }
  std::size_t step_size() const { return static_cast<std::size_t>(stack_) * dim_; }

  double& at(int step, int j, int k) { return data_[(static_cast<std::size_t>(step) * stack_ + j) * dim_ + k]; }
  double at(int step, int j, int k) const { return data_[(static_cast<std::size_t>(step) * stack_ + j) * dim_ + k]; }
  std::span<double> step(int i) { return {data_.data() + i * step_size(), step_size()}; }
  std::span<const double> step(int i) const { return {data_.data() + i * step_size(), step_size()}; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool operator==(const StackedSequence&) const = default;

 private:
  int steps_ = 0;
  int stack_ = 1;
  int dim_ = 0;
  std::vector<double> data_;
};

enum class Condition : int { kStimuli = 0, kExpressiveness = 1, kEmotion = 2 };
inline constexpr int kNumConditions = 3;

/// Null sentinel for individual stimulus frames (trimmed onsets, seed context).
inline constexpr double kNullStimulus = std::numeric_limits<double>::quiet_NaN();
inline bool is_null_stimulus(double v) { return std::isnan(v); }

struct ConditionBundle {
  std::vector<double> stimuli;
  double expressiveness = 0.0;
  double emotion = 0.0;
  std::array<bool, kNumConditions> null_mask{false, false, false};

  bool is_null(Condition c) const { return null_mask[static_cast<int>(c)]; }
  ConditionBundle with_null(Condition c) const {
    ConditionBundle out = *this;
    out.null_mask[static_cast<int>(c)] = true;
    return out;
  }
  /// Stimuli frames [start, start + length); frames past the end become null.
  ConditionBundle window(int start, int length) const;
};

StackedSequence stack_frames(const LatentSequence& x, int stack);
LatentSequence unstack_frames(const StackedSequence& z, double frame_rate = 25.0);

/// sin(t * w_k) for the first dim/2 entries, cos(t * w_k) for the rest,
/// w_k = 10000^(-2k/dim).
std::vector<double> sinusoidal_embed(double t, int dim);

}  // namespace painexpr
