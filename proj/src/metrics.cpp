#include "painexpr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "painexpr/errors.hpp"

namespace painexpr {

std::vector<double> intensity_extract(const LatentSequence& raw, const DatasetManifest& manifest) {
  if (raw.dim() != static_cast<int>(manifest.extraction_weights.size()))
    throw DataError("intensity: latent dim does not match the extraction weights");
  std::vector<double> v(static_cast<std::size_t>(raw.frames()));
  for (int t = 0; t < raw.frames(); ++t) {
    double acc = 0.0;
    for (int k = 0; k < raw.dim(); ++k) acc += manifest.extraction_weights[static_cast<std::size_t>(k)] * raw.at(t, k);
    v[static_cast<std::size_t>(t)] = std::max(0.0, acc);
  }
  return v;
}

double dtw(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ConfigError("dtw needs non-empty signals");
  const std::size_t m = b.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= m; ++j) {
      const double best = std::min({prev[j - 1], prev[j], cur[j - 1]});
      cur[j] = std::abs(a[i - 1] - b[j - 1]) + best;
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

PearsonResult pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("pearson needs equal-length signals");
  if (a.size() < 2) throw ConfigError("pearson needs at least two samples");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return {0.0, true};
  return {std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0), false};
}

double pain_sim(const LatentSequence& gen, const LatentSequence& gt, const DatasetManifest& manifest) {
  return dtw(intensity_extract(gen, manifest), intensity_extract(gt, manifest));
}

PearsonResult pain_corr(const LatentSequence& gen, const LatentSequence& gt, const DatasetManifest& manifest) {
  return pearson(intensity_extract(gen, manifest), intensity_extract(gt, manifest));
}

double pain_acc(const LatentSequence& gen, std::span<const double> stimuli, const DatasetManifest& manifest) {
  return dtw(intensity_extract(gen, manifest), stimuli);
}

double pain_dist(const LatentSequence& gen, const LatentSequence& gt) {
  if (gen.frames() != gt.frames() || gen.dim() != gt.dim()) throw ConfigError("pain_dist needs equal shapes");
  if (gen.data().empty()) throw ConfigError("pain_dist needs non-empty sequences");
  double acc = 0.0;
  for (std::size_t i = 0; i < gen.data().size(); ++i) {
    const double d = gen.data()[i] - gt.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(gen.data().size());
}

double pain_divrs(std::span<const LatentSequence> samples) {
  if (samples.size() < 2) throw ConfigError("pain_divrs needs at least two samples");
  double acc = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = i + 1; j < samples.size(); ++j, ++pairs) acc += pain_dist(samples[i], samples[j]);
  return acc / pairs;
}

double pain_var(const LatentSequence& gen) {
  if (gen.frames() < 1) throw ConfigError("pain_var needs at least one frame");
  double total = 0.0;
  for (int k = 0; k < gen.dim(); ++k) {
    double mean = 0.0;
    for (int t = 0; t < gen.frames(); ++t) mean += gen.at(t, k);
    mean /= gen.frames();
    double var = 0.0;
    for (int t = 0; t < gen.frames(); ++t) var += (gen.at(t, k) - mean) * (gen.at(t, k) - mean);
    total += var / gen.frames();
  }
  return total / gen.dim();
}

void MetricsReport::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(pain_sim) || !finite(pain_corr) || !finite(pain_dist) || !finite(pain_divrs) || !finite(pain_var) ||
      !finite(pain_acc))
    throw NumericFault("metrics report holds a non-finite value");
  if (pain_sim < 0 || pain_dist < 0 || pain_divrs < 0 || pain_var < 0 || pain_acc < 0)
    throw NumericFault("metrics report holds a negative cost");
  if (pain_corr < -1.0 || pain_corr > 1.0) throw NumericFault("pain_corr outside [-1, 1]");
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["pain_sim"] = pain_sim;
  j["pain_corr"] = pain_corr;
  j["pain_dist"] = pain_dist;
  j["pain_divrs"] = pain_divrs;
  j["pain_var"] = pain_var;
  j["pain_acc"] = pain_acc;
  j["pain_acc_gap"] = pain_acc_gap;
  j["samples"] = samples;
  j["degenerate_corr"] = degenerate_corr;
  j["config"] = nlohmann::ordered_json::parse(config_json);
  return j.dump(2);
}

std::string MetricsReport::csv_header() {
  return "method,pain_sim,pain_corr,pain_dist,pain_divrs,pain_var,pain_acc,pain_acc_gap,samples,degenerate_corr";
}

std::string MetricsReport::to_csv_row() const {
  std::ostringstream out;
  out << method << ',' << format_double(pain_sim) << ',' << format_double(pain_corr) << ',' << format_double(pain_dist)
      << ',' << format_double(pain_divrs) << ',' << format_double(pain_var) << ',' << format_double(pain_acc) << ','
      << format_double(pain_acc_gap) << ',' << samples << ',' << degenerate_corr;
  return out.str();
}

WindowIndex::WindowIndex(std::span<const SequenceRecord> train, int frames) : train_(train), frames_(frames) {
  if (frames < 1) throw ConfigError("window index needs a positive window length");
  struct Item {
    Entry e;
    std::size_t record;
  };
  std::vector<Item> items;
  for (std::size_t r = 0; r < train.size(); ++r) {
    const auto& rec = train[r];
    const int n = std::min<int>(rec.latents.frames(), static_cast<int>(rec.stimuli.size()));
    for (int s = 0; s + frames <= n; ++s) items.push_back({{rec.subject, rec.id, s}, r});
  }
  if (items.empty()) throw DataError("nearest-neighbour index is empty (no training window of " + std::to_string(frames) + " frames)");
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    return std::tie(a.e.subject, a.e.start, a.e.sequence) < std::tie(b.e.subject, b.e.start, b.e.sequence);
  });
  for (const auto& it : items) {
    entries_.push_back(it.e);
    record_of_.push_back(it.record);
  }
}

LatentSequence WindowIndex::latents(std::size_t i) const {
  return train_[record_of_[i]].latents.slice(entries_[i].start, frames_);
}

std::span<const double> WindowIndex::stimuli(std::size_t i) const {
  return std::span<const double>(train_[record_of_[i]].stimuli).subspan(static_cast<std::size_t>(entries_[i].start),
                                                                          static_cast<std::size_t>(frames_));
}

namespace {
void check_query(std::span<const double> query, int frames) {
  if (static_cast<int>(query.size()) != frames) throw ConfigError("nearest-neighbour query length must equal the window");
  for (double v : query)
    if (!std::isfinite(v)) throw DataError("nearest-neighbour query holds a non-finite stimulus");
}
}  // namespace

std::size_t WindowIndex::nearest(std::span<const double> query) const {
  check_query(query, frames_);
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_i = 0;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto cand = stimuli(i);
    double acc = 0.0;
    bool abandoned = false;
    // Partial sums only grow, so stop once this window cannot win.
    for (std::size_t f = 0; f < cand.size(); ++f) {
      const double d = cand[f] - query[f];
      acc += d * d;
      if (acc >= best) {
        abandoned = true;
        break;
      }
    }
    if (!abandoned) {
      best = acc;
      best_i = i;
    }
  }
  return best_i;
}

std::size_t WindowIndex::nearest_brute_force(std::span<const double> query) const {
  check_query(query, frames_);
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_i = 0;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto cand = stimuli(i);
    double acc = 0.0;
    for (std::size_t f = 0; f < cand.size(); ++f) acc += (cand[f] - query[f]) * (cand[f] - query[f]);
    if (acc < best) {
      best = acc;
      best_i = i;
    }
  }
  return best_i;
}

LatentSequence baseline_nearest_neighbor(const WindowIndex& index, std::span<const double> query_stimuli) {
  return index.latents(index.nearest(query_stimuli));
}

LatentSequence baseline_random(const WindowIndex& index, Rng& rng) {
  return index.latents(static_cast<std::size_t>(rng.below(index.size())));
}

}  // namespace painexpr
