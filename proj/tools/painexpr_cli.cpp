#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "painexpr/commands.hpp"
#include "painexpr/errors.hpp"

namespace {

using painexpr::RunConfig;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// Flag values land here as strings and are applied on top of the config file.
struct Overrides {
  std::map<std::string, std::string> values;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(flag, [this, key](const std::string& v) { values[key] = v; }, help);
  }
};

RunConfig build_config(const std::string& path, const Overrides& o) {
  RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::load(path);
  for (const auto& [k, v] : o.values) cfg.set(k, v);
  cfg.check_known_keys();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pain-expression latent sequence generation: datagen, train, generate, evaluate, ablate"};
  app.require_subcommand(1);
  std::string config_path;
  Overrides ov;
  app.add_option("--config", config_path, "TOML-style configuration file; flags override it");
  ov.add(&app, "--seed", "run.seed", "Seed used by every stage without its own seed");

  auto* datagen = app.add_subcommand("datagen", "Write a synthetic dataset");
  std::string out_dir;
  datagen->add_option("--out", out_dir, "Output dataset directory")->required();
  ov.add(datagen, "--train-subjects", "data.train_subjects", "Training subjects");
  ov.add(datagen, "--val-subjects", "data.val_subjects", "Validation subjects");
  ov.add(datagen, "--dim", "data.dim", "Latent dimension");

  auto* train = app.add_subcommand("train", "Train a model on a dataset");
  painexpr::TrainArgs targs;
  std::string data_dir, checkpoint, log_path, resume;
  train->add_option("--data", data_dir, "Dataset directory")->required();
  train->add_option("--out", checkpoint, "Checkpoint file to write")->required();
  train->add_option("--log", log_path, "JSON-lines training log");
  train->add_option("--resume", resume, "Continue from this checkpoint");
  ov.add(train, "--seq-len", "train.seq_len", "Training window in frames");
  ov.add(train, "--steps", "train.steps", "Total optimisation steps");
  ov.add(train, "--warmup", "train.warmup", "Linear warmup steps");
  ov.add(train, "--lr", "train.lr", "Learning rate");
  ov.add(train, "--batch-size", "train.batch_size", "Windows per step");

  // Shared sampling flags for generate / evaluate / ablate.
  auto add_sampling = [&](CLI::App* sub) {
    ov.add(sub, "--seq-len", "sample.seq_len", "Frames to generate");
    ov.add(sub, "--uncertainty", "sample.uncertainty", "Diffusion-forcing uncertainty");
    ov.add(sub, "--guide-stimuli", "guidance.stimuli", "Guidance strength for the stimuli");
    ov.add(sub, "--guide-expr", "guidance.expr", "Guidance strength for expressiveness");
    ov.add(sub, "--guide-emotion", "guidance.emotion", "Guidance strength for emotion");
    ov.add(sub, "--window", "sample.window", "Rollout window in stacked steps");
    ov.add(sub, "--horizon", "sample.horizon", "Committed steps per window");
    ov.add(sub, "--steps", "sample.steps", "Sampling steps K");
    ov.add(sub, "--mode", "sample.mode", "forcing or full-seq");
    ov.add(sub, "--samples", "sample.samples", "Samples per condition bundle");
    ov.add(sub, "--sample-seed", "sample.seed", "Sampling seed");
  };

  auto* generate = app.add_subcommand("generate", "Generate latent sequences from a checkpoint");
  painexpr::GenerateArgs gargs;
  std::string stimuli_path;
  std::optional<int> sequence;
  std::optional<double> expressiveness, emotion;
  bool stream = false;
  generate->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  generate->add_option("--data", data_dir, "Dataset directory (manifest and standardization)")->required();
  generate->add_option("--out", out_dir, "Output directory");
  generate->add_option("--sequence", sequence, "Use stimuli and subject of this dataset sequence");
  generate->add_option("--stimuli", stimuli_path, "Stimuli CSV (frame,stimulus)");
  generate->add_option("--expressiveness", expressiveness, "Expressiveness override");
  generate->add_option("--emotion", emotion, "Emotion override");
  generate->add_flag("--stream", stream, "Read stimuli from stdin, write latents to stdout as they are committed");
  add_sampling(generate);

  auto* evaluate = app.add_subcommand("evaluate", "Score model, ground truth and baselines on validation subjects");
  std::string eval_ckpt;
  evaluate->add_option("--checkpoint", eval_ckpt, "Checkpoint file (omit for baselines only)");
  evaluate->add_option("--data", data_dir, "Dataset directory")->required();
  evaluate->add_option("--out", out_dir, "Report directory")->required();
  ov.add(evaluate, "--max-sequences", "eval.max_sequences", "Limit validation sequences (0 = all)");
  add_sampling(evaluate);

  auto* ablate = app.add_subcommand("ablate", "Sweep one sampling axis and score each setting");
  std::string axis;
  ablate->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  ablate->add_option("--data", data_dir, "Dataset directory")->required();
  ablate->add_option("--out", out_dir, "Report directory")->required();
  ablate->add_option("--axis", axis, "context, uncertainty or guidance")->required();
  ov.add(ablate, "--values", "", "Comma-separated sweep values");
  ov.add(ablate, "--max-sequences", "eval.max_sequences", "Limit validation sequences (0 = all)");
  add_sampling(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    // --values is stored under the axis-specific key.
    if (auto it = ov.values.find(""); it != ov.values.end()) {
      const std::string key = axis == "context" ? "ablate.contexts"
                              : axis == "uncertainty" ? "ablate.uncertainties"
                                                      : "ablate.guidance";
      ov.values[key] = it->second;
      ov.values.erase(it);
    }
    const RunConfig cfg = build_config(config_path, ov);

    if (datagen->parsed()) {
      const auto ds = painexpr::cmd_datagen(cfg, out_dir);
      std::cout << "wrote " << ds.sequences.size() << " sequences for " << ds.subjects.size() << " subjects to "
                << out_dir << "\n";
    } else if (train->parsed()) {
      targs.data_dir = data_dir;
      targs.checkpoint = checkpoint;
      if (!log_path.empty()) targs.log = log_path;
      if (!resume.empty()) targs.resume = resume;
      const auto st = painexpr::cmd_train(cfg, targs, &std::cerr);
      std::cout << "trained to step " << st.step << ", checkpoint " << checkpoint << "\n";
    } else if (generate->parsed()) {
      gargs.checkpoint = checkpoint;
      gargs.data_dir = data_dir;
      gargs.out_dir = out_dir;
      gargs.sequence = sequence;
      if (!stimuli_path.empty()) gargs.stimuli_csv = stimuli_path;
      gargs.expressiveness = expressiveness;
      gargs.emotion = emotion;
      if (stream) {
        painexpr::cmd_generate_stream(cfg, gargs, std::cin, std::cout);
      } else {
        if (out_dir.empty()) throw painexpr::ConfigError("generate needs --out unless --stream is given");
        const auto gen = painexpr::cmd_generate(cfg, gargs);
        std::cout << "wrote " << gen.size() << " sequences of " << gen.front().frames() << " frames to " << out_dir
                  << "\n";
      }
    } else if (evaluate->parsed() || ablate->parsed()) {
      painexpr::EvaluateArgs eargs;
      if (!eval_ckpt.empty()) eargs.checkpoint = eval_ckpt;
      eargs.data_dir = data_dir;
      eargs.out_dir = out_dir;
      const auto reports =
          evaluate->parsed() ? painexpr::cmd_evaluate(cfg, eargs) : painexpr::cmd_ablate(cfg, eargs, axis);
      std::cout << painexpr::MetricsReport::csv_header() << "\n";
      for (const auto& r : reports) std::cout << r.to_csv_row() << "\n";
    }
  } catch (const painexpr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const painexpr::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const painexpr::NumericFault& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return kExitNumeric;
  }
  return 0;
}
