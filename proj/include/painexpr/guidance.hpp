#pragma once

#include <span>
#include <vector>

#include "painexpr/core.hpp"
#include "painexpr/edm.hpp"
#include "painexpr/rng.hpp"

namespace painexpr {

/// Per-condition guidance strengths; zero skips that condition's extra pass.
struct GuidanceWeights {
  double stimuli = 1.0;
  double expressiveness = 0.5;
  double emotion = 0.25;

  double weight(Condition c) const;
  int active_count() const;
  void validate() const;
  static GuidanceWeights none() { return {0.0, 0.0, 0.0}; }
};

/// Nulls each of the three channels independently with probability p.
ConditionBundle condition_dropout(const ConditionBundle& bundle, double p, Rng& rng);

/// (1 + sum w_c) D(z, C) - sum w_c D(z, C with c nulled), one extra denoiser
/// call per condition with w_c > 0.
std::vector<StackedSequence> guided_denoise(const Denoiser& denoiser, std::span<const StackedSequence> z,
                                            std::span<const std::vector<double>> sigmas,
                                            std::span<const ConditionBundle> bundles, const GuidanceWeights& weights,
                                            int t0 = 0);

}  // namespace painexpr
