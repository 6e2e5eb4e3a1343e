#include <cmath>
#include <functional>

#include "doctest.h"
#include "painexpr/autograd.hpp"
#include "painexpr/rng.hpp"

using namespace painexpr;
using ag::Graph;
using ag::Tensor;
using ag::Var;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& r, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = scale * r.normal();
  return t;
}

using Builder = std::function<Var(Graph&, const std::vector<Var>&)>;

// Central differences of sum(out * probe) against the tape's gradients.
double max_grad_error(const std::vector<Tensor>& inputs, const Builder& build, std::uint64_t seed = 11) {
  Rng r(seed, 0);
  Tensor probe;
  auto scalar = [&](const std::vector<Tensor>& in, std::vector<std::vector<double>>* grads) {
    Graph g;
    std::vector<Var> leaves;
    for (const auto& t : in) leaves.push_back(g.leaf(t));
    Var out = build(g, leaves);
    if (probe.data.empty()) probe = random_tensor(out.shape(), r);
    Var s = ag::dot_const(out, probe);
    if (grads) {
      g.backward(s);
      for (auto& l : leaves) grads->push_back(g.grad(l));
    }
    return s.value().data[0];
  };
  std::vector<std::vector<double>> grads;
  scalar(inputs, &grads);
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[a].data[i] += h;
      minus[a].data[i] -= h;
      const double fd = (scalar(plus, nullptr) - scalar(minus, nullptr)) / (2 * h);
      const double an = grads[a][i];
      const double err = std::abs(fd - an) / std::max(1.0, std::abs(fd) + std::abs(an));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace

TEST_SUITE("autograd") {
  TEST_CASE("linear matches closed form") {
    Graph g;
    Var x = g.constant(Tensor({1, 2}, {1.0, 2.0}));
    Var w = g.leaf(Tensor({1, 2}, {3.0, -1.0}));
    Var b = g.leaf(Tensor({1}, {0.5}));
    Var y = ag::linear(x, w, b);
    CHECK(y.value().data[0] == doctest::Approx(1.5));
    // loss = (w.x + b - 4)^2 -> dL/dw = 2 x (w.x + b - 4)
    Var loss = ag::weighted_mse(y, Tensor({1, 1}, {4.0}), {1.0});
    g.backward(loss);
    const auto gw = g.grad(w);
    CHECK(gw[0] == doctest::Approx(2 * 1.0 * (1.5 - 4)));
    CHECK(gw[1] == doctest::Approx(2 * 2.0 * (1.5 - 4)));
    CHECK(g.grad(b)[0] == doctest::Approx(2 * (1.5 - 4)));
  }

  TEST_CASE("constant loss has zero gradients") {
    Graph g;
    Var w = g.leaf(Tensor({3}, {1, 2, 3}));
    Var c = g.constant(Tensor({1}, {5.0}));
    g.backward(c);
    for (double v : g.grad(w)) CHECK(v == 0.0);
  }

  TEST_CASE("conv1d matches a manual convolution") {
    Graph g;
    // 1 channel, D=4, kernel 3, zero padding 1.
    Var x = g.constant(Tensor({1, 1, 4}, {1, 2, 3, 4}));
    Var w = g.constant(Tensor({1, 1, 3}, {0.5, -1.0, 2.0}));
    Var b = g.constant(Tensor({1}, {0.25}));
    const auto y = ag::conv1d(x, w, b, 1, 1).value().data;
    const double in[6] = {0, 1, 2, 3, 4, 0};
    for (int p = 0; p < 4; ++p) {
      const double expect = 0.5 * in[p] - 1.0 * in[p + 1] + 2.0 * in[p + 2] + 0.25;
      CHECK(y[static_cast<std::size_t>(p)] == doctest::Approx(expect));
    }
    const auto ys = ag::conv1d(x, w, b, 2, 1).value();
    CHECK(ys.shape == std::vector<int>{1, 1, 2});
    CHECK(ys.data[1] == doctest::Approx(0.5 * in[2] - 1.0 * in[3] + 2.0 * in[4] + 0.25));
  }

  TEST_CASE("op gradients match finite differences") {
    Rng r(5, 0);
    SUBCASE("linear") {
      CHECK(max_grad_error({random_tensor({3, 4}, r), random_tensor({2, 4}, r), random_tensor({2}, r)},
                           [](Graph&, const std::vector<Var>& v) { return ag::linear(v[0], v[1], v[2]); }) < 1e-6);
    }
    SUBCASE("conv1d stride 1 and 2") {
      for (int stride : {1, 2})
        CHECK(max_grad_error({random_tensor({2, 3, 5}, r), random_tensor({4, 3, 3}, r), random_tensor({4}, r)},
                             [stride](Graph&, const std::vector<Var>& v) {
                               return ag::conv1d(v[0], v[1], v[2], stride, 1);
                             }) < 1e-6);
    }
    SUBCASE("group norm") {
      CHECK(max_grad_error({random_tensor({2, 4, 3}, r), random_tensor({4}, r), random_tensor({4}, r)},
                           [](Graph&, const std::vector<Var>& v) { return ag::group_norm(v[0], v[1], v[2], 2); }) <
            1e-6);
    }
    SUBCASE("silu, add, modulate") {
      CHECK(max_grad_error({random_tensor({2, 3, 4}, r), random_tensor({2, 6}, r)}, [](Graph&, const std::vector<Var>& v) {
              return ag::silu(ag::add(ag::modulate(v[0], v[1]), v[0]));
            }) < 1e-6);
    }
    SUBCASE("attention") {
      CHECK(max_grad_error({random_tensor({2, 3, 4}, r), random_tensor({2, 5, 4}, r), random_tensor({2, 5, 4}, r)},
                           [](Graph&, const std::vector<Var>& v) { return ag::attention(v[0], v[1], v[2], 2); }) <
            1e-6);
    }
    SUBCASE("permute, reshape, concat, crop, upsample") {
      CHECK(max_grad_error({random_tensor({2, 3, 4}, r), random_tensor({2, 1, 4}, r)}, [](Graph&, const std::vector<Var>& v) {
              Var p = ag::permute(v[0], {2, 0, 1});
              Var back = ag::reshape(ag::permute(p, {1, 2, 0}), {2, 3, 4});
              Var c = ag::concat_channels(back, v[1]);
              return ag::crop_last(ag::upsample2_last(c), 7);
            }) < 1e-6);
    }
    SUBCASE("replace_masked and scale_const") {
      const Tensor values = random_tensor({3, 2}, r);
      const Tensor factors = random_tensor({3, 2}, r);
      CHECK(max_grad_error({random_tensor({2}, r)}, [&](Graph&, const std::vector<Var>& v) {
              return ag::scale_const(ag::replace_masked(values, {1, 0, 0, 1, 1, 1}, v[0]), factors);
            }) < 1e-6);
    }
    SUBCASE("weighted mse") {
      const Tensor target = random_tensor({2, 3}, r);
      CHECK(max_grad_error({random_tensor({2, 3}, r)}, [&](Graph&, const std::vector<Var>& v) {
              return ag::weighted_mse(v[0], target, {1, 0, 2, 1, 1, 0.5});
            }) < 1e-6);
    }
  }

  TEST_CASE("attention matches direct softmax evaluation") {
    Graph g;
    // One group, one head, 2 queries, 2 keys, F=2.
    const std::vector<double> q = {1, 0, 0.5, -1}, k = {0.3, 0.2, -0.4, 1.0}, v = {1, 2, 3, 4};
    Var out = ag::attention(g.constant(Tensor({1, 2, 2}, q)), g.constant(Tensor({1, 2, 2}, k)),
                            g.constant(Tensor({1, 2, 2}, v)), 1);
    for (int i = 0; i < 2; ++i) {
      double logits[2];
      for (int j = 0; j < 2; ++j) logits[j] = (q[i * 2] * k[j * 2] + q[i * 2 + 1] * k[j * 2 + 1]) / std::sqrt(2.0);
      const double m = std::max(logits[0], logits[1]);
      const double e0 = std::exp(logits[0] - m), e1 = std::exp(logits[1] - m);
      for (int f = 0; f < 2; ++f) {
        const double expect = (e0 * v[f] + e1 * v[2 + f]) / (e0 + e1);
        CHECK(out.value().data[static_cast<std::size_t>(i * 2 + f)] == doctest::Approx(expect));
      }
    }
  }

  TEST_CASE("shape errors are rejected") {
    Graph g;
    Var a = g.constant(Tensor({2, 3}));
    Var b = g.constant(Tensor({3, 2}));
    CHECK_THROWS(ag::add(a, b));
    CHECK_THROWS(ag::linear(a, g.constant(Tensor({2, 2})), Var{}));
  }
}
