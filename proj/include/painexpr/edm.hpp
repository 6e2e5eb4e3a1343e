#pragma once

#include <functional>
#include <span>
#include <vector>

#include "painexpr/core.hpp"
#include "painexpr/net.hpp"
#include "painexpr/rng.hpp"

namespace painexpr {

struct EdmParams {
  double sigma_data = 0.5;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
  double p_mean = -1.2;
  double p_std = 1.2;

  void validate() const;
};

struct Precond {
  double c_skip;
  double c_out;
  double c_in;
  double c_noise;
};

/// EDM scalings; c_noise(0) is clamped to c_noise(sigma_min).
Precond precondition_coeffs(double sigma, const EdmParams& params);

/// sigma_max = levels[0] > ... > levels[K-1] = sigma_min > levels[K] = 0.
struct SigmaGrid {
  std::vector<double> levels;

  int steps() const { return static_cast<int>(levels.size()) - 1; }
  /// Noise index k in [0, K] (0 = clean) to sigma.
  double sigma_at_index(int k) const { return levels[static_cast<std::size_t>(steps() - k)]; }
};

SigmaGrid karras_grid(int steps, const EdmParams& params);

/// D(z; sigma, C) over a batch of windows with per-step noise levels.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual std::vector<StackedSequence> denoise(std::span<const StackedSequence> z,
                                               std::span<const std::vector<double>> sigmas,
                                               std::span<const ConditionBundle> bundles, int t0) const = 0;
};

/// D = c_skip z + c_out F(c_in z, c_noise, C), coefficients per step.
class EdmDenoiser : public Denoiser {
 public:
  EdmDenoiser(const RawModel& model, EdmParams params) : model_(model), params_(params) {}

  std::vector<StackedSequence> denoise(std::span<const StackedSequence> z, std::span<const std::vector<double>> sigmas,
                                       std::span<const ConditionBundle> bundles, int t0) const override;
  const EdmParams& params() const { return params_; }

 private:
  const RawModel& model_;
  EdmParams params_;
};

/// Noised training batch with the network input and regression target.
struct NoisedBatch {
  std::vector<StackedSequence> clean;
  std::vector<StackedSequence> noisy;      // y + n
  std::vector<StackedSequence> net_input;  // c_in (y + n)
  std::vector<StackedSequence> target;     // (y - c_skip (y + n)) / c_out, zero on clean steps
  std::vector<std::vector<double>> sigma;
  std::vector<std::vector<double>> c_noise;
  std::vector<double> weights;  // 1 per element on noised steps, 0 on clean (sigma = 0) steps
};

/// ln sigma ~ N(p_mean, p_std^2), drawn independently for every step.
std::vector<std::vector<double>> draw_lognormal_sigmas(int batch, int steps, Rng& rng, const EdmParams& params);

NoisedBatch make_noised_batch(std::vector<StackedSequence> clean, std::vector<std::vector<double>> sigma, Rng& rng,
                              const EdmParams& params);

/// Mean of (F - target)^2 over noised steps, evaluated through a raw model.
double training_loss(const RawModel& model, const NoisedBatch& batch, std::span<const ConditionBundle> bundles,
                     int t0 = 0);

/// Carries the previous denoised estimate for the two-step update.
struct SamplerHistory {
  bool has_previous = false;
  double previous_sigma = 0.0;
  std::vector<double> previous_denoised;
};

/// Multistep update in log-sigma time given D(z_i, sigma_i). First call:
/// z' = (s'/s) z + (1 - s'/s) D; later calls blend D with the previous
/// estimate (2M correction). Returns z at sigma_next.
std::vector<double> multistep_update(std::span<const double> z, double sigma, double sigma_next,
                                     std::span<const double> denoised, SamplerHistory& history);

using DenoiseFn = std::function<std::vector<double>(std::span<const double> z, double sigma)>;

std::vector<double> sampler_step(std::span<const double> z, double sigma, double sigma_next, const DenoiseFn& denoise,
                                 SamplerHistory& history);

}  // namespace painexpr
