#include "painexpr/forcing.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "painexpr/errors.hpp"

namespace painexpr {

std::vector<int> assign_training_noise(int steps, int levels, Rng& rng) {
  if (levels < 1) throw ConfigError("training noise needs at least one level (K >= 1)");
  if (steps < 1) throw ConfigError("training noise needs at least one step");
  std::vector<int> out(static_cast<std::size_t>(steps));
  for (auto& k : out) k = static_cast<int>(rng.below(static_cast<std::uint64_t>(levels) + 1));
  return out;
}

SchedulingMatrix::SchedulingMatrix(int sweeps, int width, int context, std::vector<int> entries)
    : sweeps_(sweeps), width_(width), context_(context), entries_(std::move(entries)) {
  if (entries_.size() != static_cast<std::size_t>(sweeps) * width) throw ConfigError("scheduling matrix size mismatch");
}

bool SchedulingMatrix::valid() const {
  if (sweeps_ < 1) return false;
  for (int c = 0; c < width_; ++c) {
    if (at(sweeps_ - 1, c) != 0) return false;
    for (int r = 0; r < sweeps_; ++r) {
      if (c < context_ && at(r, c) != 0) return false;
      if (r > 0 && at(r, c) > at(r - 1, c)) return false;
      if (c > 0 && at(r, c) < at(r, c - 1)) return false;
    }
  }
  return true;
}

SchedulingMatrix staircase_matrix(int window, int new_columns, int levels, double uncertainty) {
  if (levels < 1) throw ConfigError("scheduling matrix needs K >= 1");
  if (new_columns < 1 || new_columns > window) throw ConfigError("scheduling matrix needs 0 < new columns <= window");
  if (!(uncertainty > 0.0) || !std::isfinite(uncertainty)) throw ConfigError("uncertainty must be positive");
  const int context = window - new_columns;
  std::vector<int> offsets(static_cast<std::size_t>(new_columns));
  for (int j = 0; j < new_columns; ++j) {
    offsets[static_cast<std::size_t>(j)] =
        static_cast<int>(std::floor(j * uncertainty * levels / new_columns + 1e-9));
  }
  const int sweeps = levels + offsets.back() + 1;
  std::vector<int> entries(static_cast<std::size_t>(sweeps) * window, 0);
  for (int r = 0; r < sweeps; ++r)
    for (int j = 0; j < new_columns; ++j) {
      const int level = std::clamp(levels - r + offsets[static_cast<std::size_t>(j)], 0, levels);
      entries[static_cast<std::size_t>(r) * window + context + j] = level;
    }
  return SchedulingMatrix(sweeps, window, context, std::move(entries));
}

SchedulingMatrix build_scheduling_matrix(int window, int horizon, int levels, double uncertainty) {
  if (!(horizon > 0 && horizon < window)) {
    throw ConfigError("scheduling matrix needs 0 < horizon < window (got horizon " + std::to_string(horizon) +
                      ", window " + std::to_string(window) + ")");
  }
  return staircase_matrix(window, horizon, levels, uncertainty);
}

double rollout_latency(const SchedulingMatrix& matrix, int stack, double frame_rate) {
  if (!(frame_rate > 0.0)) throw ConfigError("frame rate must be positive");
  return static_cast<double>(matrix.new_columns()) * stack / frame_rate;
}

void RolloutOptions::validate() const {
  if (!(horizon_steps > 0 && horizon_steps < window_steps))
    throw ConfigError("rollout needs 0 < horizon < window (w - h > 0)");
  if (sampling_steps < 1) throw ConfigError("rollout needs at least one sampling step");
  if (stack < 1 || dim < 1) throw ConfigError("rollout stack and dim must be positive");
  guidance.validate();
  edm.validate();
}

RolloutEngine::RolloutEngine(const Denoiser& denoiser, RolloutOptions options, std::vector<ConditionBundle> streams,
                             Rng rng, std::vector<StackedSequence> seed)
    : denoiser_(denoiser),
      options_((options.validate(), options)),
      streams_(std::move(streams)),
      grid_(karras_grid(options.sampling_steps, options.edm)),
      first_(staircase_matrix(options.window_steps, options.window_steps, options.sampling_steps, options.uncertainty)),
      steady_(build_scheduling_matrix(options.window_steps, options.horizon_steps, options.sampling_steps,
                                      options.uncertainty)) {
  if (streams_.empty()) throw ConfigError("rollout needs at least one stream");
  for (std::size_t b = 0; b < streams_.size(); ++b) rngs_.push_back(rng.split(b));
  history_.resize(streams_.size());
  if (!seed.empty()) {
    if (seed.size() != streams_.size()) throw ConfigError("rollout seed needs one context per stream");
    for (std::size_t b = 0; b < seed.size(); ++b) {
      const auto& s = seed[b];
      if (s.steps() != options_.context_steps() || s.stack() != options_.stack || s.dim() != options_.dim)
        throw ConfigError("rollout seed must hold exactly the context steps");
      for (int t = 0; t < s.steps(); ++t) history_[b].emplace_back(s.step(t).begin(), s.step(t).end());
    }
    seed_steps_ = options_.context_steps();
  }
}

int RolloutEngine::frames_required() const {
  const int ahead = (committed_steps_ == 0 && seed_steps_ == 0) ? options_.window_steps : options_.horizon_steps;
  return (committed_steps_ + ahead) * options_.stack;
}

std::vector<std::vector<double>> RolloutEngine::advance(std::span<const std::vector<double>> stimuli) {
  if (stimuli.size() != streams_.size()) throw ConfigError("rollout: one stimulus track per stream required");
  const bool first = committed_steps_ == 0 && seed_steps_ == 0;
  const SchedulingMatrix& m = first ? first_ : steady_;
  const int width = m.width();
  const int context = m.context();
  const int fresh = m.new_columns();
  const int s = options_.stack;
  const int d = options_.dim;
  // Step index (relative to frame 0) of window column 0.
  const int start_step = committed_steps_ - context;

  std::vector<StackedSequence> z;
  std::vector<ConditionBundle> bundles;
  for (std::size_t b = 0; b < streams_.size(); ++b) {
    StackedSequence win(width, s, d);
    for (int c = 0; c < context; ++c) {
      const auto& src = history_[b][static_cast<std::size_t>(seed_steps_ + start_step + c)];
      std::copy(src.begin(), src.end(), win.step(c).begin());
    }
    for (int c = context; c < width; ++c)
      for (auto& v : win.step(c)) v = options_.edm.sigma_max * rngs_[b].normal();
    z.push_back(std::move(win));

    ConditionBundle cb = streams_[b];
    cb.stimuli.assign(static_cast<std::size_t>(width) * s, kNullStimulus);
    for (int f = 0; f < width * s; ++f) {
      const int abs = start_step * s + f;
      if (abs >= 0 && abs < static_cast<int>(stimuli[b].size())) cb.stimuli[static_cast<std::size_t>(f)] = stimuli[b][static_cast<std::size_t>(abs)];
    }
    bundles.push_back(std::move(cb));
  }

  std::vector<std::vector<SamplerHistory>> hist(streams_.size(), std::vector<SamplerHistory>(static_cast<std::size_t>(width)));
  for (int r = 0; r + 1 < m.sweeps(); ++r) {
    std::vector<double> sig(static_cast<std::size_t>(width));
    for (int c = 0; c < width; ++c) sig[static_cast<std::size_t>(c)] = grid_.sigma_at_index(m.at(r, c));
    const std::vector<std::vector<double>> sigmas(streams_.size(), sig);
    const auto denoised = guided_denoise(denoiser_, z, sigmas, bundles, options_.guidance, 0);
    for (std::size_t b = 0; b < z.size(); ++b)
      for (int c = context; c < width; ++c) {
        const int from = m.at(r, c), to = m.at(r + 1, c);
        if (to == from) continue;
        auto next = multistep_update(z[b].step(c), grid_.sigma_at_index(from), grid_.sigma_at_index(to),
                                     denoised[b].step(c), hist[b][static_cast<std::size_t>(c)]);
        std::copy(next.begin(), next.end(), z[b].step(c).begin());
      }
  }

  std::vector<std::vector<double>> out(streams_.size());
  for (std::size_t b = 0; b < z.size(); ++b) {
    for (int c = context; c < width; ++c) {
      const auto step = z[b].step(c);
      for (double v : step)
        if (!std::isfinite(v)) throw NumericFault("rollout produced a non-finite latent");
      history_[b].emplace_back(step.begin(), step.end());
      out[b].insert(out[b].end(), step.begin(), step.end());
    }
  }
  committed_steps_ += fresh;
  ++windows_;
  return out;
}

std::vector<LatentSequence> rollout(const Denoiser& denoiser, const RolloutOptions& options,
                                    std::span<const ConditionBundle> bundles, int total_frames, Rng rng,
                                    std::vector<StackedSequence> seed) {
  options.validate();
  const int window_frames = options.window_steps * options.stack;
  if (total_frames < window_frames) {
    throw ConfigError("rollout length " + std::to_string(total_frames) + " is shorter than the window (" +
                      std::to_string(window_frames) + " frames)");
  }
  std::vector<std::vector<double>> tracks;
  for (const auto& b : bundles) {
    if (static_cast<int>(b.stimuli.size()) < total_frames) {
      throw DataError("stimuli underrun: frame " + std::to_string(b.stimuli.size()) + " missing (need " +
                      std::to_string(total_frames) + " frames)");
    }
    tracks.emplace_back(b.stimuli.begin(), b.stimuli.begin() + total_frames);
  }
  RolloutEngine engine(denoiser, options, {bundles.begin(), bundles.end()}, rng, std::move(seed));
  std::vector<std::vector<double>> frames(bundles.size());
  while (engine.committed_frames() < total_frames) {
    auto fresh = engine.advance(tracks);
    for (std::size_t b = 0; b < frames.size(); ++b) frames[b].insert(frames[b].end(), fresh[b].begin(), fresh[b].end());
  }
  std::vector<LatentSequence> out;
  for (auto& f : frames) {
    f.resize(static_cast<std::size_t>(total_frames) * options.dim);
    out.emplace_back(total_frames, options.dim, std::move(f), options.frame_rate);
  }
  return out;
}

std::vector<LatentSequence> sample_full_sequence(const Denoiser& denoiser, const RolloutOptions& options,
                                                 std::span<const ConditionBundle> bundles, int frames, Rng rng) {
  options.guidance.validate();
  if (frames < 1) throw ConfigError("full-sequence sampling needs at least one frame");
  const int s = options.stack;
  const int steps = (frames + s - 1) / s;
  const SigmaGrid grid = karras_grid(options.sampling_steps, options.edm);

  std::vector<StackedSequence> z;
  std::vector<ConditionBundle> conds;
  for (std::size_t b = 0; b < bundles.size(); ++b) {
    Rng r = rng.split(b);
    StackedSequence win(steps, s, options.dim);
    for (auto& v : win.data()) v = grid.levels.front() * r.normal();
    z.push_back(std::move(win));
    conds.push_back(bundles[b].window(0, steps * s));
  }
  std::vector<SamplerHistory> hist(bundles.size());
  for (int i = 0; i < grid.steps(); ++i) {
    const double sig = grid.levels[static_cast<std::size_t>(i)];
    const double next = grid.levels[static_cast<std::size_t>(i) + 1];
    const std::vector<std::vector<double>> sigmas(bundles.size(), std::vector<double>(static_cast<std::size_t>(steps), sig));
    const auto denoised = guided_denoise(denoiser, z, sigmas, conds, options.guidance, 0);
    for (std::size_t b = 0; b < z.size(); ++b) {
      auto updated = multistep_update(z[b].data(), sig, next, denoised[b].data(), hist[b]);
      z[b].data() = std::move(updated);
    }
  }
  std::vector<LatentSequence> out;
  for (auto& win : z) {
    auto seq = unstack_frames(win, options.frame_rate);
    out.push_back(seq.slice(0, frames));
  }
  return out;
}

}  // namespace painexpr
