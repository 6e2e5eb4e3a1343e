#include "painexpr/commands.hpp"

#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "painexpr/bounded_queue.hpp"
#include "painexpr/errors.hpp"
#include "painexpr/forcing.hpp"

namespace painexpr {
namespace {

using nlohmann::ordered_json;

std::string gen_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "gen_%03d", i);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

// Config-independent sample seed so every command can be rerun exactly.
std::uint64_t sample_seed(const RunConfig& cfg) { return cfg.get_u64("sample.seed", cfg.get_u64("run.seed", 1)); }

std::uint64_t stream_id(int sequence) { return 0x5EED0000ULL + static_cast<std::uint64_t>(sequence); }

std::vector<const SequenceRecord*> eval_sequences(const RunConfig& cfg, const StandardizedSplits& splits) {
  std::vector<const SequenceRecord*> out;
  const int limit = cfg.get_int("eval.max_sequences", 0);
  if (limit < 0) throw ConfigError("eval.max_sequences must be non-negative");
  for (const auto& s : splits.val) {
    if (limit > 0 && static_cast<int>(out.size()) >= limit) break;
    out.push_back(&s);
  }
  if (out.empty()) throw DataError("dataset has no validation sequences to evaluate");
  return out;
}

/// Accumulates per-sequence metrics into one report row.
class ReportBuilder {
 public:
  ReportBuilder(std::string method, const DatasetManifest& manifest, std::string config_json)
      : manifest_(manifest) {
    report_.method = std::move(method);
    report_.config_json = std::move(config_json);
  }

  /// gen/gt standardized; every sample is scored against the ground truth.
  void add(const std::vector<LatentSequence>& gen, const SequenceRecord& gt) {
    const LatentSequence gt_raw = destandardize(gt.latents, manifest_);
    const std::span<const double> stim(gt.stimuli.data(), static_cast<std::size_t>(gt.latents.frames()));
    const double acc_gt = pain_acc(gt_raw, stim, manifest_);
    for (const auto& g : gen) {
      const LatentSequence raw = destandardize(g, manifest_);
      sim_ += pain_sim(raw, gt_raw, manifest_);
      const auto pc = pain_corr(raw, gt_raw, manifest_);
      corr_ += pc.value;
      degenerate_ += pc.degenerate ? 1 : 0;
      dist_ += pain_dist(g, gt.latents);
      var_ += pain_var(g);
      const double acc = pain_acc(raw, stim, manifest_);
      acc_ += acc;
      gap_ += std::abs(acc - acc_gt);
      ++samples_;
    }
    divrs_ += gen.size() >= 2 ? pain_divrs(gen) : 0.0;
    ++sequences_;
  }

  MetricsReport finish() {
    if (samples_ == 0) throw DataError("no samples scored for " + report_.method);
    const double n = samples_;
    report_.pain_sim = sim_ / n;
    report_.pain_corr = corr_ / n;
    report_.pain_dist = dist_ / n;
    report_.pain_var = var_ / n;
    report_.pain_acc = acc_ / n;
    report_.pain_acc_gap = gap_ / n;
    report_.pain_divrs = divrs_ / sequences_;
    report_.samples = samples_;
    report_.degenerate_corr = degenerate_;
    report_.validate();
    return report_;
  }

 private:
  const DatasetManifest& manifest_;
  MetricsReport report_;
  double sim_ = 0, corr_ = 0, dist_ = 0, var_ = 0, acc_ = 0, gap_ = 0, divrs_ = 0;
  int samples_ = 0, sequences_ = 0, degenerate_ = 0;
};

std::string echo_json(const RunConfig& cfg, const std::string& command, const nlohmann::json& extra) {
  ordered_json j;
  j["command"] = command;
  j["seed"] = sample_seed(cfg);
  j["config"] = ordered_json::parse(cfg.to_json());
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  return j.dump();
}

MetricsReport score_model(const RunConfig& cfg, const Denoiser& denoiser, const RolloutOptions& options, SampleMode mode,
                          const StandardizedSplits& splits, const std::string& method, const std::string& config_json) {
  const int samples = cfg.get_int("sample.samples", 3);
  if (samples < 1) throw ConfigError("sample.samples must be >= 1");
  ReportBuilder rb(method, splits.dataset.manifest, config_json);
  for (const auto* rec : eval_sequences(cfg, splits)) {
    auto gen = generate_samples(denoiser, options, mode, rec->bundle(), rec->latents.frames(), samples,
                                Rng(sample_seed(cfg), stream_id(rec->id)));
    rb.add(gen, *rec);
  }
  return rb.finish();
}

}  // namespace

SampleMode parse_sample_mode(const std::string& s) {
  if (s == "forcing") return SampleMode::kForcing;
  if (s == "full-seq") return SampleMode::kFullSequence;
  throw ConfigError("unknown sampling mode '" + s + "' (expected forcing or full-seq)");
}

StandardizedSplits load_standardized(const std::filesystem::path& data_dir) {
  StandardizedSplits s;
  s.dataset = load_dataset(data_dir);
  for (const auto* r : s.dataset.split(false)) {
    SequenceRecord c = *r;
    c.latents = standardize(c.latents, s.dataset.manifest);
    s.train.push_back(std::move(c));
  }
  for (const auto* r : s.dataset.split(true)) {
    SequenceRecord c = *r;
    c.latents = standardize(c.latents, s.dataset.manifest);
    s.val.push_back(std::move(c));
  }
  if (s.train.empty()) throw DataError("dataset has no training sequences");
  return s;
}

LoadedModel load_model(const std::filesystem::path& checkpoint, const DatasetManifest& manifest) {
  TrainState st = load_checkpoint(checkpoint);
  if (st.manifest_hash != manifest_hash(manifest))
    throw DataError("checkpoint " + checkpoint.string() + " was trained on a different dataset (manifest hash mismatch)");
  if (st.net.dim != manifest.dim || st.net.stack != manifest.stack)
    throw DataError("checkpoint latent shape disagrees with the dataset manifest");
  TemporalUNet model(st.net, st.ema);
  return {std::move(st), std::move(model)};
}

std::vector<LatentSequence> generate_samples(const Denoiser& denoiser, const RolloutOptions& options, SampleMode mode,
                                             const ConditionBundle& bundle, int frames, int samples, Rng rng) {
  if (samples < 1) throw ConfigError("need at least one sample");
  const std::vector<ConditionBundle> bundles(static_cast<std::size_t>(samples), bundle);
  if (mode == SampleMode::kFullSequence) {
    if (static_cast<int>(bundle.stimuli.size()) < frames)
      throw DataError("stimuli underrun: frame " + std::to_string(bundle.stimuli.size()) + " missing (need " +
                      std::to_string(frames) + " frames)");
    return sample_full_sequence(denoiser, options, bundles, frames, rng);
  }
  return rollout(denoiser, options, bundles, frames, rng);
}

Dataset cmd_datagen(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  Dataset ds = generate_dataset(cfg.datagen());
  save_dataset(ds, out_dir);
  return ds;
}

TrainState cmd_train(const RunConfig& cfg, const TrainArgs& args, std::ostream* progress) {
  const StandardizedSplits splits = load_standardized(args.data_dir);
  const DatasetManifest& m = splits.dataset.manifest;
  TrainState state;
  if (args.resume) {
    state = load_checkpoint(*args.resume);
    if (state.manifest_hash != manifest_hash(m)) throw DataError("resume checkpoint was trained on a different dataset");
    // Only the step budget may change on resume.
    const TrainConfig requested = cfg.train();
    state.config.total_steps = requested.total_steps;
    state.config.validate();
    if (state.step > state.config.total_steps) throw ConfigError("resume checkpoint is already past the requested steps");
  } else {
    state = init_train_state(cfg.net(m.dim, m.stack), cfg.edm(), cfg.train(), manifest_hash(m));
  }
  state.run_config_json = echo_json(cfg, "train", {{"data", args.data_dir.string()}});

  std::ofstream log;
  if (args.log) {
    log.open(*args.log, args.resume ? std::ios::app : std::ios::trunc);
    if (!log) throw DataError("cannot write training log " + args.log->string());
  }
  const std::int64_t total = state.config.total_steps;
  const std::int64_t every = std::max<std::int64_t>(1, total / 20);
  train(state, splits.train, total, [&](std::int64_t step, const StepResult& r) {
    if (log.is_open()) log << train_log_line(step, r) << '\n';
    if (progress && (step % every == 0 || step == total)) *progress << train_log_line(step, r) << std::endl;
  });
  save_checkpoint(state, args.checkpoint);
  return state;
}

namespace {

ConditionBundle bundle_for(const GenerateArgs& args, const StandardizedSplits& splits) {
  ConditionBundle b;
  if (args.sequence && args.stimuli_csv) throw ConfigError("give either a sequence id or a stimuli file, not both");
  if (args.sequence) {
    const SequenceRecord* found = nullptr;
    for (const auto& s : splits.dataset.sequences)
      if (s.id == *args.sequence) found = &s;
    if (!found) throw DataError("sequence " + std::to_string(*args.sequence) + " not in dataset");
    b = found->bundle();
  } else if (args.stimuli_csv) {
    b.stimuli = read_stimuli_csv(*args.stimuli_csv);
    b.expressiveness = 1.0;
    b.emotion = 0.0;
  } else {
    b.expressiveness = 1.0;
  }
  if (args.expressiveness) b.expressiveness = *args.expressiveness;
  if (args.emotion) b.emotion = *args.emotion;
  return b;
}

}  // namespace

std::vector<LatentSequence> cmd_generate(const RunConfig& cfg, const GenerateArgs& args) {
  const StandardizedSplits splits = load_standardized(args.data_dir);
  const DatasetManifest& m = splits.dataset.manifest;
  const LoadedModel lm = load_model(args.checkpoint, m);
  const RolloutOptions options = cfg.rollout(m.dim, m.stack, m.frame_rate);
  const SampleMode mode = parse_sample_mode(cfg.get_string("sample.mode", "forcing"));
  const ConditionBundle bundle = bundle_for(args, splits);
  if (!args.sequence && !args.stimuli_csv) throw ConfigError("generate needs --sequence or --stimuli");
  const int frames = cfg.get_int("sample.seq_len", static_cast<int>(bundle.stimuli.size()));
  if (frames < 1) throw ConfigError("generation length must be positive");
  const int samples = cfg.get_int("sample.samples", 1);
  EdmDenoiser den(lm.model, lm.state.edm);
  const std::uint64_t seed = sample_seed(cfg);
  auto gen = generate_samples(den, options, mode, bundle, frames, samples,
                              Rng(seed, stream_id(args.sequence.value_or(-1))));

  std::filesystem::create_directories(args.out_dir);
  std::vector<LatentSequence> raw;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    raw.push_back(destandardize(gen[i], m));
    write_sequence_file(args.out_dir / (gen_name(static_cast<int>(i)) + ".bin"), raw.back());
    const auto intensity = intensity_extract(raw.back(), m);
    std::ostringstream csv;
    csv << "frame,intensity\n";
    for (std::size_t t = 0; t < intensity.size(); ++t) csv << t << ',' << format_double(intensity[t]) << '\n';
    write_text(args.out_dir / (gen_name(static_cast<int>(i)) + "_intensity.csv"), csv.str());
  }
  nlohmann::json extra{{"checkpoint", args.checkpoint.string()},
                       {"frames", frames},
                       {"samples", samples},
                       {"mode", mode == SampleMode::kForcing ? "forcing" : "full-seq"},
                       {"expressiveness", bundle.expressiveness},
                       {"emotion", bundle.emotion}};
  if (args.sequence) extra["sequence"] = *args.sequence;
  write_text(args.out_dir / "generate.json", echo_json(cfg, "generate", extra) + "\n");
  return raw;
}

int cmd_generate_stream(const RunConfig& cfg, const GenerateArgs& args, std::istream& in, std::ostream& out) {
  const StandardizedSplits splits = load_standardized(args.data_dir);
  const DatasetManifest& m = splits.dataset.manifest;
  const LoadedModel lm = load_model(args.checkpoint, m);
  const RolloutOptions options = cfg.rollout(m.dim, m.stack, m.frame_rate);
  if (cfg.get_string("sample.mode", "forcing") != "forcing") throw ConfigError("streaming requires --mode forcing");
  ConditionBundle bundle = bundle_for(args, splits);
  bundle.stimuli.clear();
  EdmDenoiser den(lm.model, lm.state.edm);
  RolloutEngine engine(den, options, {bundle}, Rng(sample_seed(cfg), stream_id(-2)));

  BoundedQueue<double> queue(1024);
  std::exception_ptr reader_error;
  std::thread reader([&] {
    try {
      std::string line;
      int lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos || line[b] == '#') continue;
        std::size_t used = 0;
        double v = 0.0;
        try {
          v = std::stod(line.substr(b), &used);
        } catch (const std::exception&) {
          throw DataError("stdin line " + std::to_string(lineno) + ": not a number");
        }
        if (line.find_first_not_of(" \t\r", b + used) != std::string::npos)
          throw DataError("stdin line " + std::to_string(lineno) + ": trailing characters");
        queue.push(v);
      }
    } catch (...) {
      reader_error = std::current_exception();
    }
    queue.close();
  });

  std::vector<std::vector<double>> track(1);
  int written = 0;
  auto emit = [&](const std::vector<double>& frames, int limit) {
    const int n = static_cast<int>(frames.size()) / m.dim;
    for (int f = 0; f < n && written < limit; ++f) {
      LatentSequence row(1, m.dim, std::vector<double>(frames.begin() + f * m.dim, frames.begin() + (f + 1) * m.dim));
      const LatentSequence raw = destandardize(row, m);
      out << written;
      for (double v : raw.data()) out << ',' << format_double(v);
      out << ',' << format_double(intensity_extract(raw, m)[0]) << '\n';
      ++written;
    }
    out.flush();
  };

  out << "frame";
  for (int k = 0; k < m.dim; ++k) out << ",y" << k;
  out << ",intensity\n";
  try {
    while (auto v = queue.pop()) {
      track[0].push_back(*v);
      while (static_cast<int>(track[0].size()) >= engine.frames_required())
        emit(engine.advance(track)[0], static_cast<int>(track[0].size()));
    }
    // End of input: finish the frames already announced, null stimuli beyond.
    const int total = static_cast<int>(track[0].size());
    while (written < total) emit(engine.advance(track)[0], total);
  } catch (...) {
    queue.close();
    reader.join();
    throw;
  }
  reader.join();
  if (reader_error) std::rethrow_exception(reader_error);
  return written;
}

std::vector<MetricsReport> cmd_evaluate(const RunConfig& cfg, const EvaluateArgs& args) {
  const StandardizedSplits splits = load_standardized(args.data_dir);
  const DatasetManifest& m = splits.dataset.manifest;
  const int samples = cfg.get_int("sample.samples", 3);
  if (samples < 1) throw ConfigError("sample.samples must be >= 1");
  const auto seqs = eval_sequences(cfg, splits);
  const std::string echo =
      echo_json(cfg, "evaluate", {{"checkpoint", args.checkpoint ? args.checkpoint->string() : ""}, {"sequences", seqs.size()}});
  std::vector<MetricsReport> reports;

  {
    ReportBuilder rb("ground_truth", m, echo);
    for (const auto* rec : seqs) rb.add({rec->latents}, *rec);
    reports.push_back(rb.finish());
  }
  if (args.checkpoint) {
    const LoadedModel lm = load_model(*args.checkpoint, m);
    EdmDenoiser den(lm.model, lm.state.edm);
    const auto mode = parse_sample_mode(cfg.get_string("sample.mode", "forcing"));
    reports.push_back(score_model(cfg, den, cfg.rollout(m.dim, m.stack, m.frame_rate), mode, splits,
                                  mode == SampleMode::kForcing ? "model_forcing" : "model_full_seq", echo));
  }
  {
    ReportBuilder nn("nearest_neighbor", m, echo);
    ReportBuilder rnd("random", m, echo);
    Rng rng(sample_seed(cfg), 0xBA5E);
    for (const auto* rec : seqs) {
      const WindowIndex index(splits.train, rec->latents.frames());
      const std::span<const double> query(rec->stimuli.data(), static_cast<std::size_t>(rec->latents.frames()));
      const LatentSequence pick = baseline_nearest_neighbor(index, query);
      nn.add(std::vector<LatentSequence>(static_cast<std::size_t>(samples), pick), *rec);
      std::vector<LatentSequence> draws;
      for (int i = 0; i < samples; ++i) draws.push_back(baseline_random(index, rng));
      rnd.add(draws, *rec);
    }
    reports.push_back(nn.finish());
    reports.push_back(rnd.finish());
  }
  std::filesystem::create_directories(args.out_dir);
  write_reports(reports, args.out_dir / "metrics.json", args.out_dir / "metrics.csv");
  return reports;
}

std::vector<MetricsReport> cmd_ablate(const RunConfig& cfg, const EvaluateArgs& args, const std::string& axis) {
  if (!args.checkpoint) throw ConfigError("ablate needs a checkpoint");
  const StandardizedSplits splits = load_standardized(args.data_dir);
  const DatasetManifest& m = splits.dataset.manifest;
  const LoadedModel lm = load_model(*args.checkpoint, m);
  EdmDenoiser den(lm.model, lm.state.edm);
  const RolloutOptions base = cfg.rollout(m.dim, m.stack, m.frame_rate);
  std::vector<std::pair<std::string, RolloutOptions>> rows;

  if (axis == "context") {
    const int window = cfg.get_int("ablate.context_window", 12);
    for (int c : cfg.get_int_list("ablate.contexts", {2, 4, 8})) {
      if (c < 1 || c >= window)
        throw ConfigError("context " + std::to_string(c) + " must lie in [1, window " + std::to_string(window) + ")");
      RolloutOptions o = base;
      o.window_steps = window;
      o.horizon_steps = window - c;
      o.validate();
      rows.emplace_back("context_" + std::to_string(c), o);
    }
  } else if (axis == "uncertainty") {
    for (const auto& u : cfg.get_list("ablate.uncertainties", {"0.5", "1", "2", "4"})) {
      RolloutOptions o = base;
      try {
        o.uncertainty = std::stod(u);
      } catch (const std::exception&) {
        throw ConfigError("bad uncertainty value '" + u + "'");
      }
      o.validate();
      rows.emplace_back("uncertainty_" + u, o);
    }
  } else if (axis == "guidance") {
    for (const auto& t : cfg.get_list("ablate.guidance", {"1_1_1", "1_2_4", "0.5_1_2", "0.25_0.5_1"})) {
      RolloutOptions o = base;
      o.guidance = parse_guidance_triple(t);
      rows.emplace_back("guidance_" + t, o);
    }
  } else {
    throw ConfigError("unknown ablation axis '" + axis + "' (expected context, uncertainty or guidance)");
  }

  std::vector<MetricsReport> reports;
  for (const auto& [name, opts] : rows) {
    nlohmann::json extra{{"axis", axis},
                         {"row", name},
                         {"window", opts.window_steps},
                         {"horizon", opts.horizon_steps},
                         {"uncertainty", opts.uncertainty},
                         {"guidance", {opts.guidance.emotion, opts.guidance.expressiveness, opts.guidance.stimuli}}};
    reports.push_back(score_model(cfg, den, opts, SampleMode::kForcing, splits, name, echo_json(cfg, "ablate", extra)));
  }
  std::filesystem::create_directories(args.out_dir);
  write_reports(reports, args.out_dir / ("ablate_" + axis + ".json"), args.out_dir / ("ablate_" + axis + ".csv"));
  return reports;
}

void write_reports(const std::vector<MetricsReport>& reports, const std::filesystem::path& json_path,
                   const std::filesystem::path& csv_path) {
  std::string json = "[\n";
  for (std::size_t i = 0; i < reports.size(); ++i) json += reports[i].to_json() + (i + 1 < reports.size() ? ",\n" : "\n");
  json += "]\n";
  write_text(json_path, json);
  std::string csv = MetricsReport::csv_header() + "\n";
  for (const auto& r : reports) csv += r.to_csv_row() + "\n";
  write_text(csv_path, csv);
}

}  // namespace painexpr
