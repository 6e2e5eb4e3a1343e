#pragma once

#include <span>
#include <string>
#include <vector>

#include "painexpr/core.hpp"
#include "painexpr/data.hpp"
#include "painexpr/rng.hpp"

namespace painexpr {

/// v_t = max(0, w . y_t) on raw (destandardized) latents.
std::vector<double> intensity_extract(const LatentSequence& raw, const DatasetManifest& manifest);

/// Total cost of the cheapest monotone alignment, local cost |a_i - b_j|.
double dtw(std::span<const double> a, std::span<const double> b);

struct PearsonResult {
  double value = 0.0;
  bool degenerate = false;  // a constant input; value is 0
};
PearsonResult pearson(std::span<const double> a, std::span<const double> b);

// gen/gt below are raw latents; intensity goes through the manifest weights.
double pain_sim(const LatentSequence& gen, const LatentSequence& gt, const DatasetManifest& manifest);
PearsonResult pain_corr(const LatentSequence& gen, const LatentSequence& gt, const DatasetManifest& manifest);
double pain_acc(const LatentSequence& gen, std::span<const double> stimuli, const DatasetManifest& manifest);

// Plain latent-space metrics; callers choose the space (evaluation uses standardized).
double pain_dist(const LatentSequence& gen, const LatentSequence& gt);
double pain_divrs(std::span<const LatentSequence> samples);
double pain_var(const LatentSequence& gen);

struct MetricsReport {
  std::string method;
  double pain_sim = 0.0;
  double pain_corr = 0.0;
  double pain_dist = 0.0;
  double pain_divrs = 0.0;
  double pain_var = 0.0;
  double pain_acc = 0.0;
  double pain_acc_gap = 0.0;  // |acc(gen) - acc(gt)|
  int samples = 0;
  int degenerate_corr = 0;
  std::string config_json = "{}";

  void validate() const;
  std::string to_json() const;
  static std::string csv_header();
  std::string to_csv_row() const;
};

/// Fixed-length training windows of the standardized training split.
class WindowIndex {
 public:
  struct Entry {
    int subject = 0;
    int sequence = 0;
    int start = 0;
  };

  WindowIndex(std::span<const SequenceRecord> train, int frames);

  int frames() const { return frames_; }
  std::size_t size() const { return entries_.size(); }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  LatentSequence latents(std::size_t i) const;
  std::span<const double> stimuli(std::size_t i) const;

  /// L2-nearest stimuli window; ties go to the lowest (subject, start).
  std::size_t nearest(std::span<const double> query) const;
  std::size_t nearest_brute_force(std::span<const double> query) const;

 private:
  std::span<const SequenceRecord> train_;
  std::vector<std::size_t> record_of_;
  std::vector<Entry> entries_;
  int frames_;
};

LatentSequence baseline_nearest_neighbor(const WindowIndex& index, std::span<const double> query_stimuli);
LatentSequence baseline_random(const WindowIndex& index, Rng& rng);

}  // namespace painexpr
