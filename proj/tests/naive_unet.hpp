#pragma once

// Loop-by-loop forward pass of the temporal U-Net, written against the
// parameter names only. Used as a second implementation in tests.

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "painexpr/core.hpp"
#include "painexpr/net.hpp"

namespace naive {

using Vec = std::vector<double>;

// Feature map [n][c][p].
struct Map {
  int n = 0, c = 0, p = 0;
  Vec v;
  Map() = default;
  Map(int n_, int c_, int p_) : n(n_), c(c_), p(p_), v(static_cast<std::size_t>(n_) * c_ * p_, 0.0) {}
  double& at(int i, int ch, int x) { return v[(static_cast<std::size_t>(i) * c + ch) * p + x]; }
  double at(int i, int ch, int x) const { return v[(static_cast<std::size_t>(i) * c + ch) * p + x]; }
};

// Row matrix [r][k].
struct Rows {
  int r = 0, k = 0;
  Vec v;
  Rows() = default;
  Rows(int r_, int k_) : r(r_), k(k_), v(static_cast<std::size_t>(r_) * k_, 0.0) {}
  double& at(int i, int j) { return v[static_cast<std::size_t>(i) * k + j]; }
  double at(int i, int j) const { return v[static_cast<std::size_t>(i) * k + j]; }
};

class Net {
 public:
  Net(const painexpr::NetConfig& cfg, const painexpr::NetWeights& w) : cfg_(cfg), w_(w) {}

  const Vec& P(const std::string& name) const { return w_[name].data; }

  static double silu(double x) { return x / (1.0 + std::exp(-x)); }

  Rows dense(const std::string& name, const Rows& x) const {
    const Vec& w = P(name + ".w");
    const Vec& b = P(name + ".b");
    const int out = static_cast<int>(b.size());
    Rows y(x.r, out);
    for (int i = 0; i < x.r; ++i)
      for (int o = 0; o < out; ++o) {
        double s = b[static_cast<std::size_t>(o)];
        for (int j = 0; j < x.k; ++j) s += w[static_cast<std::size_t>(o) * x.k + j] * x.at(i, j);
        y.at(i, o) = s;
      }
    return y;
  }

  static Rows silu(Rows x) {
    for (auto& e : x.v) e = silu(e);
    return x;
  }
  static Map silu(Map x) {
    for (auto& e : x.v) e = silu(e);
    return x;
  }

  Map conv(const std::string& name, const Map& x, int kernel, int stride) const {
    const Vec& w = P(name + ".w");
    const Vec& b = P(name + ".b");
    const int out = static_cast<int>(b.size());
    const int pad = kernel / 2;
    const int len = (x.p + 2 * pad - kernel) / stride + 1;
    Map y(x.n, out, len);
    for (int i = 0; i < x.n; ++i)
      for (int o = 0; o < out; ++o)
        for (int q = 0; q < len; ++q) {
          double s = b[static_cast<std::size_t>(o)];
          for (int ci = 0; ci < x.c; ++ci)
            for (int k = 0; k < kernel; ++k) {
              const int src = q * stride + k - pad;
              if (src < 0 || src >= x.p) continue;
              s += w[(static_cast<std::size_t>(o) * x.c + ci) * kernel + k] * x.at(i, ci, src);
            }
          y.at(i, o, q) = s;
        }
    return y;
  }

  Map norm(const std::string& name, const Map& x) const {
    const Vec& g = P(name + ".g");
    const Vec& b = P(name + ".b");
    const int groups = std::gcd(std::max(cfg_.groups, 1), x.c);
    const int per = x.c / groups;
    Map y = x;
    for (int i = 0; i < x.n; ++i)
      for (int gi = 0; gi < groups; ++gi) {
        double mean = 0.0, var = 0.0;
        for (int c = gi * per; c < (gi + 1) * per; ++c)
          for (int q = 0; q < x.p; ++q) mean += x.at(i, c, q);
        mean /= per * x.p;
        for (int c = gi * per; c < (gi + 1) * per; ++c)
          for (int q = 0; q < x.p; ++q) var += (x.at(i, c, q) - mean) * (x.at(i, c, q) - mean);
        var /= per * x.p;
        for (int c = gi * per; c < (gi + 1) * per; ++c)
          for (int q = 0; q < x.p; ++q)
            y.at(i, c, q) = (x.at(i, c, q) - mean) / std::sqrt(var + 1e-5) * g[static_cast<std::size_t>(c)] +
                            b[static_cast<std::size_t>(c)];
      }
    return y;
  }

  static Map modulate(const Map& x, const Rows& ss) {
    Map y = x;
    for (int i = 0; i < x.n; ++i)
      for (int c = 0; c < x.c; ++c)
        for (int q = 0; q < x.p; ++q) y.at(i, c, q) = x.at(i, c, q) * (1.0 + ss.at(i, c)) + ss.at(i, x.c + c);
    return y;
  }

  // q: [groups][lq][f] as Rows of groups*lq rows; k/v: groups*lk rows.
  static Rows attention(const Rows& q, const Rows& k, const Rows& v, int groups, int heads) {
    const int lq = q.r / groups, lk = k.r / groups, f = q.k, dh = f / heads;
    Rows y(q.r, f);
    for (int g = 0; g < groups; ++g)
      for (int h = 0; h < heads; ++h)
        for (int i = 0; i < lq; ++i) {
          std::vector<double> logit(static_cast<std::size_t>(lk));
          double mx = -1e300;
          for (int j = 0; j < lk; ++j) {
            double s = 0.0;
            for (int e = 0; e < dh; ++e) s += q.at(g * lq + i, h * dh + e) * k.at(g * lk + j, h * dh + e);
            logit[static_cast<std::size_t>(j)] = s / std::sqrt(static_cast<double>(dh));
            mx = std::max(mx, logit[static_cast<std::size_t>(j)]);
          }
          double den = 0.0;
          for (auto& l : logit) den += (l = std::exp(l - mx));
          for (int e = 0; e < dh; ++e) {
            double s = 0.0;
            for (int j = 0; j < lk; ++j) s += logit[static_cast<std::size_t>(j)] / den * v.at(g * lk + j, h * dh + e);
            y.at(g * lq + i, h * dh + e) = s;
          }
        }
    return y;
  }

  Rows embedding(const std::string& prefix, const std::vector<double>& pos) const {
    Rows r(static_cast<int>(pos.size()), cfg_.emb_dim);
    for (int i = 0; i < r.r; ++i) {
      const int half = cfg_.emb_dim / 2;
      for (int k = 0; k < half; ++k) {
        const double w = std::pow(10000.0, -2.0 * k / cfg_.emb_dim);
        r.at(i, k) = std::sin(pos[static_cast<std::size_t>(i)] * w);
        r.at(i, half + k) = std::cos(pos[static_cast<std::size_t>(i)] * w);
      }
    }
    return dense(prefix + ".fc2", silu(dense(prefix + ".fc1", r)));
  }

  // Condition tokens as Rows [(n * tokens), cond_dim].
  Rows conditions(const std::vector<painexpr::ConditionBundle>& bundles, int steps) const {
    const int s = cfg_.stack;
    const Vec& null = P("cond.null");
    Rows in(static_cast<int>(bundles.size()) * steps, s + 2);
    for (std::size_t b = 0; b < bundles.size(); ++b)
      for (int t = 0; t < steps; ++t) {
        const int row = static_cast<int>(b) * steps + t;
        for (int j = 0; j < s; ++j) {
          const double v = bundles[b].stimuli[static_cast<std::size_t>(t * s + j)];
          const bool nul = bundles[b].is_null(painexpr::Condition::kStimuli) || std::isnan(v);
          in.at(row, j) = nul ? null[static_cast<std::size_t>(j)] : v;
        }
        in.at(row, s) = bundles[b].is_null(painexpr::Condition::kExpressiveness) ? null[static_cast<std::size_t>(s)]
                                                                                 : bundles[b].expressiveness;
        in.at(row, s + 1) = bundles[b].is_null(painexpr::Condition::kEmotion) ? null[static_cast<std::size_t>(s + 1)]
                                                                              : bundles[b].emotion;
      }
    Rows h = dense("cond.fc2", silu(dense("cond.fc1", in)));
    Rows tokens(h.r * cfg_.cond_tokens, cfg_.cond_dim);
    tokens.v = h.v;
    return tokens;
  }

  Map resnet(const std::string& p, const Map& x, const Rows& noise_emb, int out) const {
    Map h = conv(p + ".conv1", silu(norm(p + ".norm1", x)), cfg_.kernel, 1);
    Rows ss = dense(p + ".emb", silu(noise_emb));
    h = conv(p + ".conv2", silu(modulate(norm(p + ".norm2", h), ss)), cfg_.kernel, 1);
    Map skip = x.c == out ? x : conv(p + ".skip", x, 1, 1);
    for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] += skip.v[i];
    return h;
  }

  static Rows to_tokens(const Map& x) {  // [n][c][p] -> rows (n*p) x c
    Rows r(x.n * x.p, x.c);
    for (int i = 0; i < x.n; ++i)
      for (int q = 0; q < x.p; ++q)
        for (int c = 0; c < x.c; ++c) r.at(i * x.p + q, c) = x.at(i, c, q);
    return r;
  }

  static void add_tokens(Map& x, const Rows& r) {
    for (int i = 0; i < x.n; ++i)
      for (int q = 0; q < x.p; ++q)
        for (int c = 0; c < x.c; ++c) x.at(i, c, q) += r.at(i * x.p + q, c);
  }

  Map spatial(const std::string& p, Map x, const Rows& cond) const {
    const int heads = std::gcd(std::max(cfg_.heads, 1), x.c);
    Rows t = to_tokens(norm(p + ".norm1", x));
    Rows a = attention(dense(p + ".q", t), dense(p + ".k", t), dense(p + ".v", t), x.n, heads);
    add_tokens(x, dense(p + ".o", a));
    t = to_tokens(norm(p + ".norm2", x));
    Rows c = attention(dense(p + ".xq", t), dense(p + ".xk", cond), dense(p + ".xv", cond), x.n, heads);
    add_tokens(x, dense(p + ".xo", c));
    return x;
  }

  Map temporal(const std::string& p, Map x, const Rows& step_emb, int batch, int steps) const {
    const int heads = std::gcd(std::max(cfg_.heads, 1), x.c);
    Map h = modulate(norm(p + ".norm", x), dense(p + ".mod", silu(step_emb)));
    // Tokens per (window, position): rows ordered (b, q, t).
    Rows t(batch * x.p * steps, x.c);
    for (int b = 0; b < batch; ++b)
      for (int q = 0; q < x.p; ++q)
        for (int s = 0; s < steps; ++s)
          for (int c = 0; c < x.c; ++c) t.at((b * x.p + q) * steps + s, c) = h.at(b * steps + s, c, q);
    Rows a = dense(p + ".o", attention(dense(p + ".q", t), dense(p + ".k", t), dense(p + ".v", t), batch * x.p, heads));
    for (int b = 0; b < batch; ++b)
      for (int q = 0; q < x.p; ++q)
        for (int s = 0; s < steps; ++s)
          for (int c = 0; c < x.c; ++c) x.at(b * steps + s, c, q) += a.at((b * x.p + q) * steps + s, c);
    return x;
  }

  Vec forward(const painexpr::NetBatch& batch) const {
    const int nb = batch.batch(), steps = batch.steps();
    Map x(nb * steps, cfg_.stack, cfg_.dim);
    std::vector<double> noise_pos, time_pos;
    for (int b = 0; b < nb; ++b) {
      const auto& z = batch.inputs[static_cast<std::size_t>(b)];
      for (int s = 0; s < steps; ++s) {
        for (int j = 0; j < cfg_.stack; ++j)
          for (int k = 0; k < cfg_.dim; ++k) x.at(b * steps + s, j, k) = z.at(s, j, k);
        noise_pos.push_back(batch.c_noise[static_cast<std::size_t>(b)][static_cast<std::size_t>(s)]);
        time_pos.push_back(batch.t0 + s);
      }
    }
    const Rows noise = embedding("emb.noise", noise_pos);
    const Rows time = embedding("emb.time", time_pos);
    Rows step = noise;
    for (std::size_t i = 0; i < step.v.size(); ++i) step.v[i] += time.v[i];
    const Rows cond = conditions(batch.bundles, steps);

    Map h = conv("in", x, cfg_.kernel, 1);
    std::vector<Map> skips;
    for (int l = 0; l < cfg_.levels; ++l) {
      const std::string p = "down" + std::to_string(l);
      h = temporal(p + ".tattn", spatial(p + ".sattn", resnet(p + ".res", h, noise, cfg_.width_at(l)), cond), step, nb,
                   steps);
      skips.push_back(h);
      h = conv(p + ".ds", h, cfg_.kernel, 2);
    }
    h = temporal("mid.tattn", spatial("mid.sattn", resnet("mid.res", h, noise, cfg_.mid_width()), cond), step, nb,
                 steps);
    for (int l = cfg_.levels - 1; l >= 0; --l) {
      const std::string p = "up" + std::to_string(l);
      const Map& skip = skips[static_cast<std::size_t>(l)];
      Map up(h.n, h.c, skip.p);
      for (int i = 0; i < h.n; ++i)
        for (int c = 0; c < h.c; ++c)
          for (int q = 0; q < skip.p; ++q) up.at(i, c, q) = h.at(i, c, q / 2);
      up = conv(p + ".us", up, cfg_.kernel, 1);
      Map cat(up.n, up.c + skip.c, up.p);
      for (int i = 0; i < up.n; ++i)
        for (int q = 0; q < up.p; ++q) {
          for (int c = 0; c < up.c; ++c) cat.at(i, c, q) = up.at(i, c, q);
          for (int c = 0; c < skip.c; ++c) cat.at(i, up.c + c, q) = skip.at(i, c, q);
        }
      h = temporal(p + ".tattn", spatial(p + ".sattn", resnet(p + ".res", cat, noise, cfg_.width_at(l)), cond), step,
                   nb, steps);
    }
    h = conv("out", silu(norm("out.norm", h)), cfg_.kernel, 1);
    return h.v;
  }

 private:
  painexpr::NetConfig cfg_;
  const painexpr::NetWeights& w_;
};

}  // namespace naive
