// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "painexpr/commands.hpp"
#include "painexpr/forcing.hpp"
#include "painexpr/guidance.hpp"
#include "painexpr/metrics.hpp"

using namespace painexpr;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const std::string& id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s  %-3s %-34s %s\n", pass ? "PASS" : "FAIL", id.c_str(), name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

class Stopwatch {
 public:
  double wall() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - w0_).count(); }
  double cpu() const { return static_cast<double>(std::clock() - c0_) / CLOCKS_PER_SEC; }

 private:
  std::chrono::steady_clock::time_point w0_ = std::chrono::steady_clock::now();
  std::clock_t c0_ = std::clock();
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_tree(const fs::path& a, const fs::path& b, int* files) {
  *files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    if (!fs::exists(b / e.path().filename()) || slurp(e.path()) != slurp(b / e.path().filename())) return false;
    ++*files;
  }
  int other = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(b)) ++other;
  return other == *files && *files > 0;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(PAINEXPR_CLI) + " --config " + PAINEXPR_DESK_CONFIG + " " + args + " >/dev/null 2>&1";
  return std::system(cmd.c_str());
}

void edm_identities() {
  const Stopwatch sw;
  const auto r = oracle::edm_identity_check(100, 2024);
  const double t = sw.wall();
  report("1", "EDM identities", r.max_zero_sigma_error == 0.0 && r.max_loss_rel_error < 1e-6 && t < 10.0,
         fmt("max|D(z,0)-z| = %g, loss rel err %.2e over 100 instances, %.1f s", r.max_zero_sigma_error,
             r.max_loss_rel_error, t));
}

void gradient_check() {
  const Stopwatch sw;
  const auto r = oracle::net_gradient_check(oracle::gradient_config(), 11);
  const double t = sw.wall();
  report("2", "Gradient check", r.params <= 1000 && r.worst < 1e-4 && t < 60.0,
         fmt("%zu parameters, worst relative error %.2e, %.1f s", r.params, r.worst, t));
}

void sampler_analytics() {
  // constant denoiser: the exact solution is a + (z0 - a) sigma / sigma_max
  const EdmParams p;
  const SigmaGrid g3 = karras_grid(3, p);
  const double a = 0.7, z0 = p.sigma_max * 1.3;
  const double terminal = oracle::run_sampler(z0, g3.levels, [&](double, double) { return a; });
  const double err3 = std::abs(terminal - a);

  // refinement on log-uniform grids for two affine families
  auto ratios = [](const std::function<double(double, double)>& d, const std::function<double()>& exact, double z) {
    std::vector<double> errs;
    for (int k : {3, 6, 12, 24}) errs.push_back(std::abs(oracle::run_sampler(z, oracle::geometric_grid(1.0, 0.5, k), d) - exact()));
    std::vector<double> r;
    for (std::size_t i = 1; i < errs.size(); ++i) r.push_back(errs[i - 1] / errs[i]);
    return r;
  };
  const double b = 0.7, za = 1.3;
  const auto r_sigma = ratios([&](double, double s) { return a + b * s; },
                              [&] { return oracle::affine_sigma_exact(za, 1.0, 0.5, a, b); }, za);
  // optimal denoiser of N(mu, s^2) data; the flow is mu + (z - mu) sqrt(s^2 + sigma^2) / sqrt(s^2 + sigma0^2)
  const double mu = 0.3, sd = 0.5;
  const auto r_gauss = ratios([&](double z, double s) { return mu + sd * sd / (sd * sd + s * s) * (z - mu); },
                              [&] { return mu + (za - mu) * std::sqrt((sd * sd + 0.25) / (sd * sd + 1.0)); }, za);
  double worst = 1e300;
  for (double r : r_sigma) worst = std::min(worst, r);
  for (double r : r_gauss) worst = std::min(worst, r);
  report("3", "Sampler analytics", err3 < 1e-3 && worst >= 3.0,
         fmt("3-step terminal error %.2e; halving ratios a+b*sigma %.2f %.2f %.2f, gaussian %.2f %.2f %.2f (min %.2f)",
             err3, r_sigma[0], r_sigma[1], r_sigma[2], r_gauss[0], r_gauss[1], r_gauss[2], worst));
}

void dtw_oracle() {
  const Stopwatch sw;
  const auto r = oracle::dtw_alphabet_sweep(6, [](const std::vector<double>& x, const std::vector<double>& y) { return dtw(x, y); });
  const double t = sw.wall();
  report("4", "DTW oracle equivalence", r.mismatches == 0 && r.cases == 1192464 && t < 60.0,
         fmt("%lld pairs (lengths 1-6 over {0,1,2}), %lld mismatches, %.1f s", r.cases, r.mismatches, t));
}

void scheduling_matrices() {
  int matrices = 0, bad = 0, non_monotone = 0;
  for (int k : {4, 8})
    for (int context : {2, 4, 8}) {
      const int window = 12, horizon = window - context;
      int last = 0;
      for (double u : {0.5, 1.0, 2.0, 4.0}) {
        const SchedulingMatrix m = build_scheduling_matrix(window, horizon, k, u);
        ++matrices;
        bool ok = m.at(0, context) == k;
        for (int c = 0; c < window; ++c) {
          ok = ok && m.at(m.sweeps() - 1, c) == 0;
          for (int r = 0; r < m.sweeps(); ++r) {
            if (c < context) ok = ok && m.at(r, c) == 0;
            if (r > 0) ok = ok && m.at(r, c) <= m.at(r - 1, c);
            ok = ok && m.at(r, c) >= 0 && m.at(r, c) <= k;
          }
        }
        bad += !ok;
        non_monotone += m.sweeps() < last;
        last = m.sweeps();
      }
    }
  report("5", "Scheduling-matrix validity", matrices == 24 && bad == 0 && non_monotone == 0,
         fmt("%d matrices (K 4/8, context 2/4/8 of 12, u 0.5-4): %d invalid, %d sweep-count decreases", matrices, bad,
             non_monotone));
}

void guidance_checks() {
  Rng rng(5, 0);
  const NetConfig cfg = oracle::tiny_config();
  NetWeights w = TemporalUNet::init_weights(cfg, rng);
  oracle::randomize(w, rng, 0.2);
  const NetBatch nb = oracle::random_batch(cfg, 2, 3, rng);
  const std::vector<std::vector<double>> sigma{{0.3, 1.0, 4.0}, {0.05, 0.05, 20.0}};
  const EdmParams edm;

  const TemporalUNet net(cfg, w);
  const EdmDenoiser den(net, edm);
  const auto plain = den.denoise(nb.inputs, sigma, nb.bundles, 0);
  const auto zero = guided_denoise(den, nb.inputs, sigma, nb.bundles, GuidanceWeights::none());
  bool bitwise = true;
  for (std::size_t b = 0; b < plain.size(); ++b) bitwise = bitwise && plain[b].data() == zero[b].data();

  // condition-independent: the stub, and the network with its cross-attention values zeroed
  NetWeights blind = w;
  for (std::size_t i = 0; i < blind.count(); ++i)
    if (blind.name(i).find(".sattn.xv.") != std::string::npos)
      for (auto& v : blind.tensor(i).data) v = 0.0;
  const TemporalUNet blind_net(cfg, blind);
  const EdmDenoiser blind_den(blind_net, edm);
  const oracle::FnDenoiser stub([](double z, double s, const ConditionBundle&) { return std::tanh(z) / (1.0 + s); });
  double worst = 0.0;
  for (const Denoiser* d : {static_cast<const Denoiser*>(&stub), static_cast<const Denoiser*>(&blind_den)}) {
    const auto base = d->denoise(nb.inputs, sigma, nb.bundles, 0);
    for (const GuidanceWeights& g : {GuidanceWeights{}, GuidanceWeights{4, 2, 1}, GuidanceWeights{0, 8, 0}}) {
      const auto out = guided_denoise(*d, nb.inputs, sigma, nb.bundles, g);
      for (std::size_t b = 0; b < base.size(); ++b)
        for (std::size_t e = 0; e < base[b].data().size(); ++e)
          worst = std::max(worst, std::abs(out[b].data()[e] - base[b].data()[e]) / (1.0 + std::abs(base[b].data()[e])));
    }
  }
  report("6", "Guidance neutrality/cancellation", bitwise && worst < 1e-12,
         fmt("lambda=0 bitwise %s; condition-free outputs vary by %.1e across lambda", bitwise ? "equal" : "DIFFERENT",
             worst));
}

double max_frame_norm(const LatentSequence& x) {
  double m = 0.0;
  for (int t = 0; t < x.frames(); ++t) {
    double s = 0.0;
    for (int k = 0; k < x.dim(); ++k) s += x.at(t, k) * x.at(t, k);
    if (!std::isfinite(s)) return INFINITY;
    m = std::max(m, std::sqrt(s));
  }
  return m;
}

void end_to_end(const fs::path& root) {
  const Stopwatch sw;
  const RunConfig cfg = RunConfig::load(PAINEXPR_DESK_CONFIG);
  const fs::path data = root / "data", ckpt = root / "model.ckpt";
  cmd_datagen(cfg, data);
  const StandardizedSplits splits = load_standardized(data);
  const DatasetManifest& m = splits.dataset.manifest;
  const TrainConfig tc = cfg.train();

  {
    // (a) one fixed batch and one fixed noise draw
    TrainState s = init_train_state(cfg.net(m.dim, m.stack), cfg.edm(), tc, manifest_hash(m));
    Rng r(tc.seed, 0xF1);
    const TrainBatch batch = sample_train_batch(s, splits.train, r);
    double loss = 0.0;
    for (int k = 0; k < 2000; ++k) {
      std::vector<double> grad;
      Rng noise(tc.seed, 0xF2);
      loss = loss_and_gradient(s.net, s.edm, s.weights, batch, noise, &grad);
      apply_gradient(s, grad, loss);
    }
    report("7a", "Single-batch overfit", loss < 0.05,
           fmt("loss %.4f after 2000 steps (T=%d, batch %d, width %d)", loss, tc.seq_len, tc.batch_size,
               cfg.net(m.dim, m.stack).widths.front()));
  }

  cmd_train(cfg, TrainArgs{data, ckpt, root / "train.jsonl", std::nullopt});
  EvaluateArgs ea;
  ea.checkpoint = ckpt;
  ea.data_dir = data;
  ea.out_dir = root / "eval";
  const auto reports = cmd_evaluate(cfg, ea);
  const MetricsReport* model = nullptr;
  const MetricsReport* random = nullptr;
  const MetricsReport* nn = nullptr;
  for (const auto& r : reports) {
    if (r.method == "model_forcing") model = &r;
    if (r.method == "random") random = &r;
    if (r.method == "nearest_neighbor") nn = &r;
  }
  if (!model || !random || !nn) {
    report("7b", "Model beats random baseline", false, "missing report rows");
    return;
  }
  report("7b", "Model beats random baseline",
         model->pain_sim < random->pain_sim && model->pain_dist < random->pain_dist &&
             model->pain_corr >= random->pain_corr + 0.1,
         fmt("sim %.2f vs %.2f, dist %.3f vs %.3f, corr %.3f vs %.3f (%d training steps, %zu val sequences)",
             model->pain_sim, random->pain_sim, model->pain_dist, random->pain_dist, model->pain_corr,
             random->pain_corr, tc.total_steps, splits.val.size()));

  {
    // (c) 20x the training horizon
    const LoadedModel lm = load_model(ckpt, m);
    const EdmDenoiser den(lm.model, lm.state.edm);
    double train_max = 0.0;
    for (const auto& rec : splits.train) train_max = std::max(train_max, max_frame_norm(rec.latents));
    Rng r(cfg.get_u64("run.seed", 1), 0x640);
    ConditionBundle bundle = splits.val.front().bundle();
    bundle.stimuli = gen_stimuli(random_stimuli_profile(640, r));
    const auto gen = generate_samples(den, cfg.rollout(m.dim, m.stack, m.frame_rate), SampleMode::kForcing, bundle, 640, 1,
                                      Rng(cfg.get_u64("run.seed", 1), 0x641));
    const double gen_max = max_frame_norm(gen.front());
    report("7c", "Long rollout stays bounded", gen.front().frames() == 640 && gen_max <= 5.0 * train_max,
           fmt("640 frames from a %d-frame training window: max frame norm %.2f, training max %.2f (ratio %.2f)",
               tc.seq_len, gen_max, train_max, gen_max / train_max));
  }

  report("7d", "Diversity over nearest neighbour", nn->pain_divrs == 0.0 && model->pain_divrs > nn->pain_divrs,
         fmt("model divrs %.4f, nearest-neighbour divrs %.4f", model->pain_divrs, nn->pain_divrs));
  const double cpu = sw.cpu();
  report("7", "Desk-scale end-to-end budget", cpu <= 30 * 60.0, fmt("%.0f CPU-seconds (limit 1800)", cpu));
}

void reproducibility(const fs::path& root) {
  // Both runs use the same paths (outputs echo them), the first is moved aside.
  const fs::path d = root / "run", a = root / "a", b = root / "b";
  bool ok = true;
  std::string detail;
  for (const fs::path& keep : {a, b}) {
    const std::string data = (d / "data").string(), ckpt = (d / "model.ckpt").string();
    ok = ok && cli("datagen --out " + data + " --train-subjects 6 --val-subjects 2") == 0;
    ok = ok && cli("train --data " + data + " --out " + ckpt + " --steps 20 --warmup 5") == 0;
    ok = ok && cli("generate --checkpoint " + ckpt + " --data " + data + " --out " + (d / "gen").string() +
                   " --sequence 0 --samples 2 --steps 8") == 0;
    ok = ok && cli("evaluate --checkpoint " + ckpt + " --data " + data + " --out " + (d / "eval").string() +
                   " --max-sequences 2 --samples 2 --steps 8") == 0;
    ok = ok && cli("ablate --checkpoint " + ckpt + " --data " + data + " --out " + (d / "ablate").string() +
                   " --axis uncertainty --max-sequences 1 --samples 2 --steps 6") == 0;
    if (ok) fs::rename(d, keep);
  }
  if (!ok) {
    report("8", "Reproducibility", false, "a command failed");
    return;
  }
  int total = 0;
  for (const char* sub : {"data", "gen", "eval", "ablate"}) {
    int files = 0;
    const bool same = same_tree(a / sub, b / sub, &files);
    ok = ok && same;
    total += files;
    detail += std::string(sub) + (same ? " identical, " : " DIFFERS, ");
  }
  const bool ckpt_same = slurp(a / "model.ckpt") == slurp(b / "model.ckpt");
  ok = ok && ckpt_same;
  detail += std::string("checkpoint ") + (ckpt_same ? "identical" : "DIFFERS");
  report("8", "Reproducibility", ok, fmt("%d files + checkpoint compared: %s", total, detail.c_str()));
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "painexpr_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  try {
    edm_identities();
    gradient_check();
    sampler_analytics();
    dtw_oracle();
    scheduling_matrices();
    guidance_checks();
    end_to_end(root / "desk");
    reproducibility(root / "repro");
  } catch (const std::exception& e) {
    std::printf("FAIL  --  aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%s: %d failing\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
