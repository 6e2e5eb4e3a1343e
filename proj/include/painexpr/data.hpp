#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "painexpr/core.hpp"
#include "painexpr/rng.hpp"

namespace painexpr {

inline constexpr std::uint32_t kSequenceFormatVersion = 1;
inline constexpr std::uint32_t kManifestFormatVersion = 1;

struct StimuliSegment {
  int level = 0;     // 0..4
  int duration = 1;  // plateau frames
};

/// Trapezoid segments: ramp frames rising 0 -> level, plateau, ramp falling.
struct StimuliProfile {
  std::vector<StimuliSegment> segments;
  int ramp = 5;

  void validate() const;
};

std::vector<double> gen_stimuli(const StimuliProfile& profile);

/// Random alternation of rest and pain segments covering at least `frames`.
StimuliProfile random_stimuli_profile(int frames, Rng& rng);

struct SubjectProfile {
  int id = 0;
  double expressiveness = 1.0;      // P
  double emotion = 0.0;             // E
  std::vector<double> response_gain;
  int latency_frames = 0;
  double decay = 0.9;               // AR(1) coefficient in (0, 1)
  bool low_expressive = false;

  void validate() const;
};

/// Per-dim emotion offset e(E).
std::vector<double> emotion_offset(double emotion, int dim);

struct OracleNoise {
  double sigma_obs = 0.0;
  std::vector<double> raw_scale;  // per-dim output scale (jaw dims are small); empty = ones
};

/// y_t = decay y_{t-1} + (1 - decay) P f(c_{t-latency}) (gain + e(E)) + noise,
/// f(x) = x / (1 + x), y_{-1} = 0.
LatentSequence oracle_response(std::span<const double> stimuli, const SubjectProfile& subject, const OracleNoise& noise,
                               Rng& rng, double frame_rate = 25.0);

struct DatasetManifest {
  std::uint32_t version = kManifestFormatVersion;
  int dim = 8;
  double frame_rate = 25.0;
  int stack = 4;
  int subject_count = 0;
  std::vector<int> train_subjects;
  std::vector<int> val_subjects;
  std::vector<double> mean;
  std::vector<double> std;
  double jaw_scale = 100.0;
  std::vector<int> jaw_dims;
  std::vector<double> extraction_weights;
  std::string config_json = "{}";  // generator configuration echo

  void validate() const;
  bool is_jaw(int k) const;
};

struct SubjectInfo {
  int id = 0;
  double expressiveness = 0.0;
  double emotion = 0.0;
};

struct SequenceRecord {
  int id = 0;
  int subject = 0;
  double expressiveness = 0.0;
  double emotion = 0.0;
  std::vector<double> stimuli;
  LatentSequence latents;  // raw (unstandardized) latents

  ConditionBundle bundle() const { return ConditionBundle{stimuli, expressiveness, emotion, {false, false, false}}; }
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<SubjectInfo> subjects;
  std::vector<SequenceRecord> sequences;

  std::vector<const SequenceRecord*> split(bool validation) const;
};

struct DataGenConfig {
  int dim = 8;
  double frame_rate = 25.0;
  int stack = 4;
  int train_subjects = 40;
  int val_subjects = 10;
  int train_sequences_per_subject = 2;
  int val_sequences_per_subject = 1;
  int train_frames = 400;
  int val_frames = 160;
  double sigma_obs = 0.02;
  double jaw_scale = 100.0;
  int jaw_dims = 1;
  std::uint64_t seed = 7;

  void validate() const;
  std::string to_json() const;
};

/// Synthetic subjects and sequences with training-split standardization stats.
Dataset generate_dataset(const DataGenConfig& config);

/// Jaw dims scaled, then per-dim standardization with manifest stats.
LatentSequence standardize(const LatentSequence& x, const DatasetManifest& manifest);
LatentSequence destandardize(const LatentSequence& x, const DatasetManifest& manifest);
/// Mean/std per dim over the given raw sequences after jaw scaling.
void compute_standardization(DatasetManifest& manifest, std::span<const SequenceRecord* const> train);

struct TrainingWindow {
  LatentSequence latents;  // standardized
  ConditionBundle bundle;
  int sequence = 0;
  int start = 0;
  int trimmed = 0;  // leading stimulus frames replaced by the null sentinel
};

/// Uniform over all (sequence, start) windows of `frames` frames; with
/// probability trim_prob a random leading part (< frames) of the stimuli is nulled.
/// Sequences must hold standardized latents.
TrainingWindow sample_training_window(std::span<const SequenceRecord> sequences, int frames, Rng& rng,
                                      double trim_prob = 0.5);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// One latent record: 16-byte header ("PXLS", version, T, d) then
/// little-endian float32 row-major T x d.
void write_sequence_file(const std::filesystem::path& path, const LatentSequence& x);
LatentSequence read_sequence_file(const std::filesystem::path& path, int sequence_id, double frame_rate);

void write_stimuli_csv(const std::filesystem::path& path, std::span<const double> stimuli);
std::vector<double> read_stimuli_csv(const std::filesystem::path& path);

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text);
std::uint64_t manifest_hash(const DatasetManifest& m);

std::string format_double(double v);

}  // namespace painexpr
