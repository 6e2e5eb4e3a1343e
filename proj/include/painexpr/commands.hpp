#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "painexpr/metrics.hpp"
#include "painexpr/run_config.hpp"
#include "painexpr/trainer.hpp"

namespace painexpr {

enum class SampleMode { kForcing, kFullSequence };
SampleMode parse_sample_mode(const std::string& s);

/// Dataset splits with latents standardized by the manifest.
struct StandardizedSplits {
  Dataset dataset;
  std::vector<SequenceRecord> train;
  std::vector<SequenceRecord> val;
};
StandardizedSplits load_standardized(const std::filesystem::path& data_dir);

/// Checkpoint plus the model rebuilt from its EMA weights.
struct LoadedModel {
  TrainState state;
  TemporalUNet model;
};
LoadedModel load_model(const std::filesystem::path& checkpoint, const DatasetManifest& manifest);

/// N samples for one bundle, standardized latents of exactly `frames` frames.
std::vector<LatentSequence> generate_samples(const Denoiser& denoiser, const RolloutOptions& options, SampleMode mode,
                                             const ConditionBundle& bundle, int frames, int samples, Rng rng);

Dataset cmd_datagen(const RunConfig& cfg, const std::filesystem::path& out_dir);

struct TrainArgs {
  std::filesystem::path data_dir;
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> log;
  std::optional<std::filesystem::path> resume;
};
TrainState cmd_train(const RunConfig& cfg, const TrainArgs& args, std::ostream* progress = nullptr);

struct GenerateArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::optional<int> sequence;                        // take stimuli and subject from this sequence
  std::optional<std::filesystem::path> stimuli_csv;   // or an explicit stimuli file
  std::optional<double> expressiveness;
  std::optional<double> emotion;
};
/// Writes gen_<i>.bin (raw latents), gen_<i>_intensity.csv and generate.json.
std::vector<LatentSequence> cmd_generate(const RunConfig& cfg, const GenerateArgs& args);

/// Reads one stimulus value per line and writes CSV rows
/// frame,y_0..y_{d-1},intensity as soon as each horizon is committed.
/// Returns the number of frames written.
int cmd_generate_stream(const RunConfig& cfg, const GenerateArgs& args, std::istream& in, std::ostream& out);

struct EvaluateArgs {
  std::optional<std::filesystem::path> checkpoint;  // without one, only ground truth and baselines
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
};
/// Rows: ground_truth, model (if any), nearest_neighbor, random.
std::vector<MetricsReport> cmd_evaluate(const RunConfig& cfg, const EvaluateArgs& args);

/// Axis "context", "uncertainty" or "guidance"; one report per value.
std::vector<MetricsReport> cmd_ablate(const RunConfig& cfg, const EvaluateArgs& args, const std::string& axis);

void write_reports(const std::vector<MetricsReport>& reports, const std::filesystem::path& json_path,
                   const std::filesystem::path& csv_path);

}  // namespace painexpr
