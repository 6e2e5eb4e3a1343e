#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "painexpr/commands.hpp"
#include "painexpr/errors.hpp"

using namespace painexpr;
namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"(
# tiny end-to-end setup
[run]
seed = 5

[data]
dim = 4
train_subjects = 4
val_subjects = 2
train_frames = 96
val_frames = 48

[net]
widths = [8]
levels = 1
heads = 2
groups = 2
emb_dim = 8
cond_dim = 8
cond_tokens = 2
cond_hidden = 8

[train]
seq_len = 32
batch_size = 2
steps = 6
warmup = 2

[sample]
window = 4
horizon = 2
steps = 4
samples = 2

[eval]
max_sequences = 2
)";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(PAINEXPR_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

// Dataset and a few-step checkpoint shared by the end-to-end cases.
struct Workspace {
  fs::path root = fs::temp_directory_path() / "painexpr_test_cli";
  fs::path config = root / "small.toml";
  fs::path data = root / "data";
  fs::path ckpt = root / "model.ckpt";
  RunConfig cfg;

  Workspace() {
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream(config) << kSmallConfig;
    cfg = RunConfig::load(config);
    cmd_datagen(cfg, data);
    cmd_train(cfg, TrainArgs{data, ckpt, root / "train.jsonl", std::nullopt});
  }
};

const Workspace& workspace() {
  static const Workspace w;
  return w;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("config parsing") {
    const RunConfig c = RunConfig::parse(kSmallConfig);
    CHECK(c.get_int("data.dim", 0) == 4);
    CHECK(c.get_int_list("net.widths", {}) == std::vector<int>{8});
    CHECK(c.get_string("missing.key", "x") == "x");
    CHECK(c.datagen().dim == 4);
    CHECK(c.datagen().seed == 5);
    CHECK(c.train().seed == 5);
    CHECK(c.train().total_steps == 6);
    CHECK(c.net(4, 4).widths == std::vector<int>{8});
    CHECK_NOTHROW(c.check_known_keys());

    RunConfig o = c;
    o.set("data.dim", "6");
    CHECK(o.datagen().dim == 6);

    RunConfig bad = c;
    bad.set("train.learning_rate", "1");
    CHECK_THROWS_AS(bad.check_known_keys(), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("[data\ndim = 3"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("dim 3"), ConfigError);
    RunConfig nan = c;
    nan.set("data.dim", "four");
    CHECK_THROWS_AS(nan.datagen(), ConfigError);

    const GuidanceWeights g = parse_guidance_triple("1_2_4");
    CHECK(g.emotion == 1.0);
    CHECK(g.expressiveness == 2.0);
    CHECK(g.stimuli == 4.0);
    CHECK_THROWS_AS(parse_guidance_triple("1_2"), ConfigError);
    CHECK(nlohmann::json::parse(c.to_json())["data"]["dim"] == "4");
  }

  TEST_CASE("exit codes") {
    const Workspace& w = workspace();
    CHECK(run_cli("") == 2);
    CHECK(run_cli("datagen") == 2);
    CHECK(run_cli("--config " + w.config.string() + " --frobnicate 1 datagen --out " + (w.root / "x").string()) == 2);
    const fs::path bad_cfg = w.root / "bad.toml";
    std::ofstream(bad_cfg) << "[train]\nlearning_rate = 3\n";
    CHECK(run_cli("--config " + bad_cfg.string() + " datagen --out " + (w.root / "x").string()) == 2);
    CHECK(run_cli("--config " + w.config.string() + " evaluate --data " + (w.root / "nowhere").string() + " --out " +
                  (w.root / "e").string()) == 3);
    CHECK(run_cli("--config " + w.config.string() + " generate --checkpoint " + (w.root / "none.ckpt").string() +
                  " --data " + w.data.string() + " --out " + (w.root / "g").string() + " --sequence 0") == 3);
    CHECK(run_cli("--help") == 0);
  }

  TEST_CASE("datagen through the binary is byte-identical across runs") {
    const Workspace& w = workspace();
    const fs::path a = w.root / "dg_a", b = w.root / "dg_b";
    REQUIRE(run_cli("--config " + w.config.string() + " datagen --out " + a.string()) == 0);
    REQUIRE(run_cli("--config " + w.config.string() + " datagen --out " + b.string()) == 0);
    int files = 0;
    for (const auto& e : fs::directory_iterator(a)) {
      CHECK_MESSAGE(slurp(e.path()) == slurp(b / e.path().filename()), e.path().filename().string());
      ++files;
    }
    CHECK(files > 3);
    // and identical to the in-process dataset
    CHECK(slurp(a / "manifest.json") == slurp(w.data / "manifest.json"));
  }

  TEST_CASE("training writes a checkpoint and a JSON log") {
    const Workspace& w = workspace();
    const TrainState s = load_checkpoint(w.ckpt);
    CHECK(s.step == 6);
    std::istringstream log(slurp(w.root / "train.jsonl"));
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(std::isfinite(j["loss"].get<double>()));
      ++lines;
    }
    CHECK(lines == 6);
    CHECK(nlohmann::json::parse(s.run_config_json)["config"]["train"]["steps"] == "6");

    // resuming to a later step continues from the saved one
    RunConfig more = w.cfg;
    more.set("train.steps", "8");
    const TrainState r = cmd_train(more, TrainArgs{w.data, w.root / "more.ckpt", std::nullopt, w.ckpt});
    CHECK(r.step == 8);
  }

  TEST_CASE("generate produces the requested length") {
    const Workspace& w = workspace();
    RunConfig c = w.cfg;
    c.set("sample.seq_len", "37");
    const fs::path out = w.root / "gen";
    GenerateArgs g;
    g.checkpoint = w.ckpt;
    g.data_dir = w.data;
    g.out_dir = out;
    g.sequence = 0;
    const auto gen = cmd_generate(c, g);
    REQUIRE(gen.size() == 2u);
    CHECK(gen[0].frames() == 37);
    CHECK(gen[0].dim() == 4);
    CHECK(read_sequence_file(out / "gen_000.bin", 0, 25.0).frames() == 37);
    CHECK(count_lines(slurp(out / "gen_001_intensity.csv")) == 38u);
    CHECK(fs::exists(out / "generate.json"));
    CHECK(cmd_generate(c, g)[1] == gen[1]);

    g.sequence = 999;
    CHECK_THROWS_AS(cmd_generate(c, g), DataError);

    RunConfig full = c;
    full.set("sample.mode", "full-seq");
    full.set("sample.seq_len", "32");
    g.sequence = 0;
    CHECK(cmd_generate(full, g)[0].frames() == 32);
  }

  TEST_CASE("streaming emits one row per stimulus") {
    const Workspace& w = workspace();
    const fs::path in = w.root / "stim.txt", out = w.root / "stream.csv";
    {
      std::ofstream f(in);
      for (int i = 0; i < 29; ++i) f << 0.1 * i << "\n";
    }
    const std::string cmd = std::string(PAINEXPR_CLI) + " --config " + w.config.string() + " generate --checkpoint " +
                            w.ckpt.string() + " --data " + w.data.string() + " --sequence 1 --stream < " +
                            in.string() + " > " + out.string();
    REQUIRE(std::system(cmd.c_str()) == 0);
    std::istringstream csv(slurp(out));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "frame,y0,y1,y2,y3,intensity");
    int rows = 0;
    while (std::getline(csv, line)) {
      CHECK(line.rfind(std::to_string(rows) + ",", 0) == 0);
      CHECK(std::count(line.begin(), line.end(), ',') == 5);
      ++rows;
    }
    CHECK(rows == 29);

    std::istringstream bad("0.1\nabc\n");
    std::ostringstream sink;
    GenerateArgs g;
    g.checkpoint = w.ckpt;
    g.data_dir = w.data;
    g.sequence = 1;
    CHECK_THROWS_AS(cmd_generate_stream(w.cfg, g, bad, sink), DataError);
  }

  TEST_CASE("evaluate scores ground truth and both baselines") {
    const Workspace& w = workspace();
    EvaluateArgs e;
    e.checkpoint = w.ckpt;
    e.data_dir = w.data;
    e.out_dir = w.root / "eval";
    const auto reports = cmd_evaluate(w.cfg, e);
    REQUIRE(reports.size() == 4u);
    CHECK(reports[0].method == "ground_truth");
    CHECK(reports[0].pain_sim == 0.0);
    CHECK(reports[0].pain_dist == 0.0);
    CHECK(reports[1].method == "model_forcing");
    CHECK(reports[2].method == "nearest_neighbor");
    CHECK(reports[2].pain_divrs == 0.0);
    CHECK(reports[3].method == "random");
    CHECK(reports[3].samples == 4);
    const auto j = nlohmann::json::parse(slurp(e.out_dir / "metrics.json"));
    CHECK(j.size() == 4u);
    CHECK(j[0]["config"]["command"] == "evaluate");
    CHECK(count_lines(slurp(e.out_dir / "metrics.csv")) == 5u);

    EvaluateArgs base = e;
    base.checkpoint.reset();
    base.out_dir = w.root / "eval_base";
    CHECK(cmd_evaluate(w.cfg, base).size() == 3u);
  }

  TEST_CASE("ablation rows") {
    const Workspace& w = workspace();
    EvaluateArgs e;
    e.checkpoint = w.ckpt;
    e.data_dir = w.data;
    e.out_dir = w.root / "ablate";
    RunConfig c = w.cfg;
    c.set("eval.max_sequences", "1");
    c.set("ablate.context_window", "6");
    c.set("ablate.contexts", "2, 3, 4");
    CHECK(cmd_ablate(c, e, "context").size() == 3u);
    CHECK(cmd_ablate(c, e, "uncertainty").size() == 4u);
    const auto g = cmd_ablate(c, e, "guidance");
    REQUIRE(g.size() == 4u);
    CHECK(g[1].method == "guidance_1_2_4");
    CHECK(fs::exists(e.out_dir / "ablate_guidance.csv"));
    CHECK_THROWS_AS(cmd_ablate(c, e, "depth"), ConfigError);
    c.set("ablate.contexts", "6");
    CHECK_THROWS_AS(cmd_ablate(c, e, "context"), ConfigError);
  }
}
