#include "painexpr/edm.hpp"

#include <cmath>
#include <string>

#include "painexpr/errors.hpp"

namespace painexpr {

void EdmParams::validate() const {
  if (!(sigma_data > 0.0)) throw ConfigError("edm: sigma_data must be positive");
  if (!(sigma_min > 0.0 && sigma_min < sigma_max)) throw ConfigError("edm: need 0 < sigma_min < sigma_max");
  if (!(rho > 0.0)) throw ConfigError("edm: rho must be positive");
  if (!(p_std > 0.0)) throw ConfigError("edm: p_std must be positive");
}

Precond precondition_coeffs(double sigma, const EdmParams& params) {
  if (!(sigma >= 0.0)) throw ConfigError("edm: sigma must be non-negative");
  const double sd2 = params.sigma_data * params.sigma_data;
  const double total = sigma * sigma + sd2;
  Precond c{};
  c.c_skip = sd2 / total;
  c.c_out = sigma * params.sigma_data / std::sqrt(total);
  c.c_in = 1.0 / std::sqrt(total);
  c.c_noise = std::log(sigma > 0.0 ? sigma : params.sigma_min) / 4.0;
  return c;
}

SigmaGrid karras_grid(int steps, const EdmParams& params) {
  if (steps < 1) throw ConfigError("sigma grid needs at least one step");
  params.validate();
  SigmaGrid grid;
  grid.levels.resize(static_cast<std::size_t>(steps) + 1);
  const double hi = std::pow(params.sigma_max, 1.0 / params.rho);
  const double lo = std::pow(params.sigma_min, 1.0 / params.rho);
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    grid.levels[static_cast<std::size_t>(i)] = std::pow(hi + frac * (lo - hi), params.rho);
  }
  // Exact endpoints regardless of pow round-off.
  grid.levels.front() = params.sigma_max;
  if (steps > 1) grid.levels[static_cast<std::size_t>(steps) - 1] = params.sigma_min;
  grid.levels.back() = 0.0;
  return grid;
}

std::vector<StackedSequence> EdmDenoiser::denoise(std::span<const StackedSequence> z,
                                                  std::span<const std::vector<double>> sigmas,
                                                  std::span<const ConditionBundle> bundles, int t0) const {
  if (z.size() != sigmas.size() || z.size() != bundles.size())
    throw ConfigError("denoise: batch components disagree in size");
  NetBatch batch;
  batch.t0 = t0;
  batch.bundles.assign(bundles.begin(), bundles.end());
  std::vector<std::vector<Precond>> coeffs(z.size());
  for (std::size_t b = 0; b < z.size(); ++b) {
    const auto& win = z[b];
    if (static_cast<int>(sigmas[b].size()) != win.steps()) throw ConfigError("denoise: one sigma per step required");
    StackedSequence scaled = win;
    std::vector<double> c_noise(static_cast<std::size_t>(win.steps()));
    for (int t = 0; t < win.steps(); ++t) {
      const Precond c = precondition_coeffs(sigmas[b][static_cast<std::size_t>(t)], params_);
      coeffs[b].push_back(c);
      c_noise[static_cast<std::size_t>(t)] = c.c_noise;
      for (auto& v : scaled.step(t)) v *= c.c_in;
    }
    batch.inputs.push_back(std::move(scaled));
    batch.c_noise.push_back(std::move(c_noise));
  }
  auto raw = model_.evaluate(batch);
  for (std::size_t b = 0; b < z.size(); ++b) {
    for (int t = 0; t < z[b].steps(); ++t) {
      const Precond& c = coeffs[b][static_cast<std::size_t>(t)];
      auto out = raw[b].step(t);
      const auto in = z[b].step(t);
      for (std::size_t e = 0; e < out.size(); ++e) out[e] = c.c_skip * in[e] + c.c_out * out[e];
    }
  }
  return raw;
}

std::vector<std::vector<double>> draw_lognormal_sigmas(int batch, int steps, Rng& rng, const EdmParams& params) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(batch), std::vector<double>(static_cast<std::size_t>(steps)));
  for (auto& row : out)
    for (auto& s : row) s = std::exp(params.p_mean + params.p_std * rng.normal());
  return out;
}

NoisedBatch make_noised_batch(std::vector<StackedSequence> clean, std::vector<std::vector<double>> sigma, Rng& rng,
                              const EdmParams& params) {
  if (clean.size() != sigma.size()) throw ConfigError("noised batch: sigma rows must match windows");
  NoisedBatch nb;
  for (std::size_t b = 0; b < clean.size(); ++b) {
    const auto& y = clean[b];
    if (static_cast<int>(sigma[b].size()) != y.steps()) throw ConfigError("noised batch: one sigma per step required");
    StackedSequence noisy = y, input = y, target = y;
    std::vector<double> c_noise;
    for (int t = 0; t < y.steps(); ++t) {
      const double s = sigma[b][static_cast<std::size_t>(t)];
      const Precond c = precondition_coeffs(s, params);
      c_noise.push_back(c.c_noise);
      auto yn = noisy.step(t);
      auto in = input.step(t);
      auto tg = target.step(t);
      const auto y0 = y.step(t);
      for (std::size_t e = 0; e < yn.size(); ++e) {
        yn[e] = y0[e] + s * rng.normal();
        in[e] = c.c_in * yn[e];
        tg[e] = s > 0.0 ? (y0[e] - c.c_skip * yn[e]) / c.c_out : 0.0;
        nb.weights.push_back(s > 0.0 ? 1.0 : 0.0);
      }
    }
    nb.noisy.push_back(std::move(noisy));
    nb.net_input.push_back(std::move(input));
    nb.target.push_back(std::move(target));
    nb.c_noise.push_back(std::move(c_noise));
  }
  nb.clean = std::move(clean);
  nb.sigma = std::move(sigma);
  return nb;
}

double training_loss(const RawModel& model, const NoisedBatch& batch, std::span<const ConditionBundle> bundles, int t0) {
  NetBatch nb{batch.net_input, batch.c_noise, {bundles.begin(), bundles.end()}, t0};
  const auto pred = model.evaluate(nb);
  double acc = 0.0, wsum = 0.0;
  std::size_t e = 0;
  for (std::size_t b = 0; b < pred.size(); ++b) {
    const auto& p = pred[b].data();
    const auto& t = batch.target[b].data();
    for (std::size_t i = 0; i < p.size(); ++i, ++e) {
      acc += batch.weights[e] * (p[i] - t[i]) * (p[i] - t[i]);
      wsum += batch.weights[e];
    }
  }
  if (wsum == 0.0) throw NumericFault("training loss: batch has no noised steps");
  return acc / wsum;
}

std::vector<double> multistep_update(std::span<const double> z, double sigma, double sigma_next,
                                     std::span<const double> denoised, SamplerHistory& history) {
  if (!(sigma_next < sigma)) throw ConfigError("sampler: sigma_next must be below sigma");
  if (sigma_next < 0.0) throw ConfigError("sampler: sigma_next must be non-negative");
  if (z.size() != denoised.size()) throw ConfigError("sampler: denoised size mismatch");
  std::vector<double> blended(denoised.begin(), denoised.end());
  if (history.has_previous && sigma_next > 0.0) {
    const double h = std::log(sigma / sigma_next);
    const double h_last = std::log(history.previous_sigma / sigma);
    const double r = h_last / h;
    const double a = 1.0 + 1.0 / (2.0 * r);
    const double b = 1.0 / (2.0 * r);
    for (std::size_t e = 0; e < blended.size(); ++e) blended[e] = a * denoised[e] - b * history.previous_denoised[e];
  }
  const double ratio = sigma_next / sigma;
  std::vector<double> out(z.size());
  for (std::size_t e = 0; e < z.size(); ++e) out[e] = ratio * z[e] + (1.0 - ratio) * blended[e];
  history.has_previous = true;
  history.previous_sigma = sigma;
  history.previous_denoised.assign(denoised.begin(), denoised.end());
  return out;
}

std::vector<double> sampler_step(std::span<const double> z, double sigma, double sigma_next, const DenoiseFn& denoise,
                                 SamplerHistory& history) {
  if (!(sigma_next < sigma)) throw ConfigError("sampler: sigma_next must be below sigma");
  const auto d = denoise(z, sigma);
  return multistep_update(z, sigma, sigma_next, d, history);
}

}  // namespace painexpr
