#include <cmath>
#include <set>

#include "doctest.h"
#include "painexpr/bounded_queue.hpp"
#include "painexpr/core.hpp"
#include "painexpr/errors.hpp"
#include "painexpr/rng.hpp"

#include <thread>

using namespace painexpr;

TEST_SUITE("core") {
  TEST_CASE("rng streams are reproducible and independent") {
    Rng a(42, 3), b(42, 3), c(42, 4), d(43, 3);
    bool all_equal = true;
    int same_c = 0, same_d = 0;
    for (int i = 0; i < 1000000; ++i) {
      const auto x = a.next_u64();
      all_equal = all_equal && x == b.next_u64();
      same_c += x == c.next_u64();
      same_d += x == d.next_u64();
    }
    CHECK(all_equal);
    CHECK(same_c == 0);
    CHECK(same_d == 0);
  }

  TEST_CASE("rng distributions") {
    Rng r(1, 0);
    const int n = 200000;
    double sum = 0, sq = 0, usum = 0;
    std::vector<int> hist(5, 0);
    for (int i = 0; i < n; ++i) {
      const double z = r.normal();
      sum += z;
      sq += z * z;
      const double u = r.uniform();
      CHECK_UNARY(u >= 0.0);
      CHECK_UNARY(u < 1.0);
      usum += u;
      ++hist[static_cast<std::size_t>(r.below(5))];
    }
    CHECK(sum / n == doctest::Approx(0.0).epsilon(0.01).scale(1.0));
    CHECK(sq / n == doctest::Approx(1.0).epsilon(0.02));
    CHECK(usum / n == doctest::Approx(0.5).epsilon(0.01));
    for (int h : hist) CHECK(std::abs(h - n / 5) < n / 5 * 0.02);
  }

  TEST_CASE("rng split is deterministic and differs from parent") {
    Rng p(9, 1);
    Rng s1 = p.split(2), s2 = p.split(2), s3 = p.split(3);
    const auto x = s1.next_u64();
    CHECK(x == s2.next_u64());
    CHECK(x != s3.next_u64());
    CHECK(x != Rng(9, 1).next_u64());
  }

  TEST_CASE("stack_frames index bookkeeping") {
    LatentSequence x(8, 4);
    for (int t = 0; t < 8; ++t)
      for (int k = 0; k < 4; ++k) x.at(t, k) = 10 * t + k;
    const StackedSequence z = stack_frames(x, 4);
    CHECK(z.steps() == 2);
    CHECK(z.stack() == 4);
    CHECK(z.dim() == 4);
    for (int k = 0; k < 4; ++k) CHECK(z.at(0, 1, k) == x.at(1, k));
    for (int tp = 0; tp < 2; ++tp)
      for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k) CHECK(z.at(tp, j, k) == x.at(tp * 4 + j, k));
  }

  TEST_CASE("stack_frames s=1 and s=T") {
    LatentSequence x(5, 3);
    Rng r(2, 0);
    for (auto& v : x.data()) v = r.normal();
    const auto z1 = stack_frames(x, 1);
    CHECK(z1.steps() == 5);
    CHECK(z1.data() == x.data());
    const auto z5 = stack_frames(x, 5);
    CHECK(z5.steps() == 1);
    CHECK(unstack_frames(z5) == x);
  }

  TEST_CASE("training configuration: T=64, s=4 gives 16 steps") {
    CHECK(stack_frames(LatentSequence(64, 8), 4).steps() == 16);
  }

  TEST_CASE("stack/unstack roundtrip over random divisible shapes") {
    Rng r(3, 0);
    for (int trial = 0; trial < 50; ++trial) {
      const int s = 1 + static_cast<int>(r.below(5));
      const int steps = 1 + static_cast<int>(r.below(6));
      const int d = 1 + static_cast<int>(r.below(7));
      LatentSequence x(steps * s, d);
      for (auto& v : x.data()) v = r.normal();
      const auto back = unstack_frames(stack_frames(x, s));
      REQUIRE(back.frames() == x.frames());
      for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(back.data()[i] == x.data()[i]);
    }
  }

  TEST_CASE("stack_frames rejects a remainder") {
    try {
      stack_frames(LatentSequence(10, 2), 4);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("remainder 2") != std::string::npos);
    }
    CHECK_THROWS_AS(stack_frames(LatentSequence(8, 2), 0), ConfigError);
  }

  TEST_CASE("sinusoidal embedding") {
    const auto e0 = sinusoidal_embed(0.0, 6);
    for (int k = 0; k < 3; ++k) {
      CHECK(e0[static_cast<std::size_t>(k)] == 0.0);
      CHECK(e0[static_cast<std::size_t>(k + 3)] == 1.0);
    }
    const auto e1 = sinusoidal_embed(1.0, 4);
    const double w1 = std::pow(10000.0, -0.5);
    CHECK(e1[0] == doctest::Approx(std::sin(1.0)).epsilon(1e-15));
    CHECK(e1[1] == doctest::Approx(std::sin(w1)).epsilon(1e-15));
    CHECK(e1[2] == doctest::Approx(std::cos(1.0)).epsilon(1e-15));
    CHECK(e1[3] == doctest::Approx(std::cos(w1)).epsilon(1e-15));
    Rng r(4, 0);
    for (int i = 0; i < 200; ++i) {
      const double t = r.uniform() * 1e4;
      const auto e = sinusoidal_embed(t, 16);
      CHECK(e == sinusoidal_embed(t, 16));
      for (double v : e) CHECK(std::abs(v) <= 1.0);
    }
    CHECK_THROWS_AS(sinusoidal_embed(1.0, 5), ConfigError);
    CHECK_THROWS_AS(sinusoidal_embed(1.0, 0), ConfigError);
  }

  TEST_CASE("condition bundle window and null handling") {
    ConditionBundle b{{1, 2, 3, 4}, 0.7, -0.3, {false, false, false}};
    const auto w = b.window(2, 4);
    CHECK(w.stimuli[0] == 3);
    CHECK(w.stimuli[1] == 4);
    CHECK(is_null_stimulus(w.stimuli[2]));
    CHECK(is_null_stimulus(w.stimuli[3]));
    CHECK(w.expressiveness == 0.7);
    const auto n = b.with_null(Condition::kEmotion);
    CHECK(n.is_null(Condition::kEmotion));
    CHECK_FALSE(b.is_null(Condition::kEmotion));
  }

  TEST_CASE("latent sequence rejects bad shapes") {
    CHECK_THROWS_AS(LatentSequence(0, 3), ConfigError);
    CHECK_THROWS_AS(LatentSequence(2, 3, std::vector<double>(5)), ConfigError);
    CHECK_THROWS_AS(LatentSequence(4, 2).slice(3, 2), ConfigError);
  }

  TEST_CASE("bounded queue drains after close") {
    BoundedQueue<int> q(2);
    std::thread producer([&] {
      for (int i = 0; i < 100; ++i) q.push(i);
      q.close();
    });
    int expected = 0;
    while (auto v = q.pop()) CHECK(*v == expected++);
    producer.join();
    CHECK(expected == 100);
    CHECK_THROWS_AS(q.push(1), DataError);
  }
}
