#include "painexpr/guidance.hpp"

#include <cmath>

#include "painexpr/errors.hpp"

namespace painexpr {

double GuidanceWeights::weight(Condition c) const {
  switch (c) {
    case Condition::kStimuli: return stimuli;
    case Condition::kExpressiveness: return expressiveness;
    case Condition::kEmotion: return emotion;
  }
  return 0.0;
}

int GuidanceWeights::active_count() const {
  return (stimuli > 0.0 ? 1 : 0) + (expressiveness > 0.0 ? 1 : 0) + (emotion > 0.0 ? 1 : 0);
}

void GuidanceWeights::validate() const {
  for (double w : {stimuli, expressiveness, emotion})
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("guidance weights must be finite and non-negative");
}

ConditionBundle condition_dropout(const ConditionBundle& bundle, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("condition dropout probability must lie in [0, 1]");
  ConditionBundle out = bundle;
  for (int c = 0; c < kNumConditions; ++c)
    if (rng.bernoulli(p)) out.null_mask[static_cast<std::size_t>(c)] = true;
  return out;
}

std::vector<StackedSequence> guided_denoise(const Denoiser& denoiser, std::span<const StackedSequence> z,
                                            std::span<const std::vector<double>> sigmas,
                                            std::span<const ConditionBundle> bundles, const GuidanceWeights& weights,
                                            int t0) {
  weights.validate();
  auto full = denoiser.denoise(z, sigmas, bundles, t0);
  if (weights.active_count() == 0) return full;

  double total = 0.0;
  for (int c = 0; c < kNumConditions; ++c) total += weights.weight(static_cast<Condition>(c));
  std::vector<StackedSequence> out = full;
  for (auto& win : out)
    for (auto& v : win.data()) v *= 1.0 + total;

  for (int c = 0; c < kNumConditions; ++c) {
    const auto cond = static_cast<Condition>(c);
    const double w = weights.weight(cond);
    if (!(w > 0.0)) continue;
    std::vector<ConditionBundle> nulled;
    nulled.reserve(bundles.size());
    for (const auto& b : bundles) nulled.push_back(b.with_null(cond));
    const auto partial = denoiser.denoise(z, sigmas, nulled, t0);
    for (std::size_t b = 0; b < out.size(); ++b) {
      auto& dst = out[b].data();
      const auto& src = partial[b].data();
      for (std::size_t e = 0; e < dst.size(); ++e) dst[e] -= w * src[e];
    }
  }
  return out;
}

}  // namespace painexpr
