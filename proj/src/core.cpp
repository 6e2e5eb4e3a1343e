#include "painexpr/core.hpp"

#include <string>

#include "painexpr/errors.hpp"

namespace painexpr {

LatentSequence::LatentSequence(int frames, int dim, double frame_rate)
    : LatentSequence(frames, dim, std::vector<double>(static_cast<std::size_t>(frames) * dim, 0.0), frame_rate) {}

LatentSequence::LatentSequence(int frames, int dim, std::vector<double> data, double frame_rate)
    : frames_(frames), dim_(dim), frame_rate_(frame_rate), data_(std::move(data)) {
  if (frames < 1 || dim < 1) throw ConfigError("LatentSequence needs frames >= 1 and dim >= 1");
  if (!(frame_rate > 0.0)) throw ConfigError("LatentSequence frame rate must be positive");
  if (data_.size() != static_cast<std::size_t>(frames) * dim)
    throw ConfigError("LatentSequence data size does not match frames x dim");
}

LatentSequence LatentSequence::slice(int start, int length) const {
  if (start < 0 || length < 1 || start + length > frames_)
    throw ConfigError("LatentSequence::slice out of range");
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(start) * dim_,
                          data_.begin() + static_cast<std::ptrdiff_t>(start + length) * dim_);
  return LatentSequence(length, dim_, std::move(out), frame_rate_);
}

StackedSequence::StackedSequence(int steps, int stack, int dim)
    : StackedSequence(steps, stack, dim, std::vector<double>(static_cast<std::size_t>(steps) * stack * dim, 0.0)) {}

StackedSequence::StackedSequence(int steps, int stack, int dim, std::vector<double> data)
    : steps_(steps), stack_(stack), dim_(dim), data_(std::move(data)) {
  if (steps < 1 || stack < 1 || dim < 1) throw ConfigError("StackedSequence needs positive extents");
  if (data_.size() != static_cast<std::size_t>(steps) * stack * dim)
    throw ConfigError("StackedSequence data size does not match steps x stack x dim");
}

ConditionBundle ConditionBundle::window(int start, int length) const {
  ConditionBundle out = *this;
  out.stimuli.assign(static_cast<std::size_t>(length), kNullStimulus);
  for (int i = 0; i < length; ++i) {
    const int src = start + i;
    if (src >= 0 && src < static_cast<int>(stimuli.size())) out.stimuli[i] = stimuli[src];
  }
  return out;
}

StackedSequence stack_frames(const LatentSequence& x, int stack) {
  if (stack < 1) throw ConfigError("frame stack must be positive");
  if (x.frames() % stack != 0) {
    throw ConfigError("cannot stack " + std::to_string(x.frames()) + " frames by " + std::to_string(stack) +
                      ": remainder " + std::to_string(x.frames() % stack));
  }
  return StackedSequence(x.frames() / stack, stack, x.dim(), x.data());
}

LatentSequence unstack_frames(const StackedSequence& z, double frame_rate) {
  return LatentSequence(z.steps() * z.stack(), z.dim(), z.data(), frame_rate);
}

std::vector<double> sinusoidal_embed(double t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ConfigError("sinusoidal embedding dim must be even and >= 2");
  const int half = dim / 2;
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int k = 0; k < half; ++k) {
    const double freq = std::pow(10000.0, -2.0 * k / dim);
    out[k] = std::sin(t * freq);
    out[half + k] = std::cos(t * freq);
  }
  return out;
}

}  // namespace painexpr
