#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <random>

#include "mpe/precision.hpp"

using Catch::Approx;

namespace {

mpe::QuantizerParams flat_params(double step, std::size_t dim) {
  std::vector<int> bits{1, 2, 3, 4, 5, 6};
  return mpe::QuantizerParams::from_values(bits, std::vector<double>(bits.size(), step),
                                           std::vector<double>(dim, 0.0));
}

}  // namespace

TEST_CASE("candidate sets validate their shape") {
  REQUIRE_NOTHROW(mpe::CandidateSet({0, 1, 2, 3, 4, 5, 6}));
  REQUIRE_NOTHROW(mpe::CandidateSet({6}));  // degeneracy runs force m = 1
  REQUIRE_THROWS_AS(mpe::CandidateSet({}), std::invalid_argument);
  REQUIRE_THROWS_AS(mpe::CandidateSet({3, 3}), std::invalid_argument);
  REQUIRE_THROWS_AS(mpe::CandidateSet({6, 3}), std::invalid_argument);
  REQUIRE_THROWS_AS(mpe::CandidateSet({-1, 3}), std::invalid_argument);
}

TEST_CASE("softmax probabilities") {
  SECTION("zero logits give the uniform distribution") {
    auto state = mpe::GroupPrecisionState::zeros(2, 7, 3e-3);
    auto p = mpe::probabilities(state, 0);
    for (double v : p) REQUIRE(v == Approx(1.0 / 7.0));
  }
  SECTION("closed-form two-candidate case") {
    const double tau = 0.4;
    auto state = mpe::GroupPrecisionState::zeros(1, 2, tau);
    state.gamma = {tau * std::log(2.0), 0.0};
    auto p = mpe::probabilities(state, 0);
    REQUIRE(p[0] == Approx(2.0 / 3.0));
    REQUIRE(p[1] == Approx(1.0 / 3.0));
  }
  SECTION("adding a constant to a row leaves probabilities unchanged") {
    auto state = mpe::GroupPrecisionState::zeros(1, 5, 0.7);
    state.gamma = {0.3, -1.2, 0.9, 0.0, 2.2};
    auto p1 = mpe::probabilities(state, 0);
    for (auto& g : state.gamma) g += 13.5;
    auto p2 = mpe::probabilities(state, 0);
    for (std::size_t i = 0; i < p1.size(); ++i) REQUIRE(p1[i] == Approx(p2[i]));
  }
  SECTION("probabilities sum to one under extreme logits") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> logits(0.0, 3.0);
    auto state = mpe::GroupPrecisionState::zeros(1, 7, 3e-3);
    for (int trial = 0; trial < 2000; ++trial) {
      for (auto& g : state.gamma) g = logits(rng);
      auto p = mpe::probabilities(state, 0);
      const double sum = std::accumulate(p.begin(), p.end(), 0.0);
      REQUIRE(std::abs(sum - 1.0) < 1e-9);
      for (double v : p) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
      }
    }
  }
}

TEST_CASE("mixture_forward") {
  const mpe::CandidateSet cands({0, 1, 2, 3, 4, 5, 6});
  auto params = flat_params(0.25, 2);

  SECTION("one-hot probability degenerates to plain quantization") {
    std::vector<double> e{0.37, -0.14};
    std::vector<double> p(7, 0.0);
    p[4] = 1.0;  // candidate 4 bits
    auto out = mpe::mixture_forward(e, params, cands, p);
    auto q = mpe::quantize_vector(e, params, 4);
    REQUIRE(out == q.values);
  }
  SECTION("the zero candidate halves a two-way mixture") {
    const mpe::CandidateSet pair({0, 6});
    auto params6 = mpe::QuantizerParams::from_values({6}, {0.01}, {0.0, 0.0});
    std::vector<double> e{0.2, -0.07};
    std::vector<double> p{0.5, 0.5};
    auto out = mpe::mixture_forward(e, params6, pair, p);
    auto q = mpe::quantize_vector(e, params6, 6);
    REQUIRE(out[0] == Approx(0.5 * q.values[0]));
    REQUIRE(out[1] == Approx(0.5 * q.values[1]));
  }
  SECTION("uniform mixture of a grid point keeps 6/7 of it") {
    // e sits on the grid of every bit-width (codes {-1, 0} fit even b = 1).
    std::vector<double> e{-0.25, 0.0};
    std::vector<double> p(7, 1.0 / 7.0);
    auto out = mpe::mixture_forward(e, params, cands, p);

    // Explicit-summation oracle.
    std::vector<double> expect(2, 0.0);
    for (std::size_t i = 0; i < cands.size(); ++i) {
      auto q = mpe::quantize_vector(e, params, cands[i]);
      for (std::size_t j = 0; j < 2; ++j) expect[j] += p[i] * q.values[j];
    }
    for (std::size_t j = 0; j < 2; ++j) {
      REQUIRE(out[j] == Approx(expect[j]).margin(1e-15));
      REQUIRE(out[j] == Approx(6.0 / 7.0 * e[j]).margin(1e-12));
    }
  }
}

TEST_CASE("mixture_backward") {
  const mpe::CandidateSet cands({0, 3, 6});
  auto params = mpe::QuantizerParams::from_values({3, 6}, {0.1, 0.01}, {0.0, 0.0, 0.0});

  SECTION("one-hot interior reduces to the straight-through estimator") {
    std::vector<double> e{0.05, -0.03, 0.0};  // interior for b = 3, alpha = 0.1
    std::vector<double> p{0.0, 1.0, 0.0};
    std::vector<double> up{0.4, -0.2, 0.7};
    auto g = mpe::mixture_backward(e, params, cands, p, up);
    REQUIRE(g.d_embedding == up);
    REQUIRE(g.d_offset == std::vector<double>{0.0, 0.0, 0.0});
  }
  SECTION("the zero candidate contributes nothing") {
    std::vector<double> e{0.05, -0.03, 0.0};
    std::vector<double> p{1.0, 0.0, 0.0};
    std::vector<double> up{0.4, -0.2, 0.7};
    auto g = mpe::mixture_backward(e, params, cands, p, up);
    REQUIRE(g.d_embedding == std::vector<double>{0.0, 0.0, 0.0});
    REQUIRE(g.d_step == std::vector<double>{0.0, 0.0, 0.0});
    REQUIRE(g.d_offset == std::vector<double>{0.0, 0.0, 0.0});
    REQUIRE(g.d_prob[0] == 0.0);
  }
  SECTION("d_prob matches central differences of the linear loss") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> dist(0.0, 0.2);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> e(3), up(3);
      for (auto& x : e) x = dist(rng);
      for (auto& x : up) x = dist(rng);
      std::vector<double> p{0.2, 0.5, 0.3};
      auto g = mpe::mixture_backward(e, params, cands, p, up);
      const double h = 1e-4;
      for (std::size_t i = 0; i < p.size(); ++i) {
        auto lo = p, hi = p;
        lo[i] -= h;
        hi[i] += h;
        const auto f_hi = mpe::mixture_forward(e, params, cands, hi);
        const auto f_lo = mpe::mixture_forward(e, params, cands, lo);
        double fd = 0.0;
        for (std::size_t j = 0; j < e.size(); ++j) fd += up[j] * (f_hi[j] - f_lo[j]);
        fd /= 2.0 * h;
        REQUIRE(g.d_prob[i] == Approx(fd).margin(1e-6 * std::max(1.0, std::abs(fd))));
      }
    }
  }
}

TEST_CASE("gamma_grad") {
  SECTION("constant d_prob is annihilated") {
    std::vector<double> p{0.1, 0.2, 0.3, 0.4};
    std::vector<double> dp(4, 2.5);
    auto dg = mpe::gamma_grad(p, dp, 0.5);
    for (double v : dg) REQUIRE(v == Approx(0.0).margin(1e-15));
  }
  SECTION("two-candidate hand case") {
    std::vector<double> p{0.5, 0.5};
    std::vector<double> dp{1.0, 0.0};
    auto dg = mpe::gamma_grad(p, dp, 1.0);
    REQUIRE(dg[0] == Approx(0.25));
    REQUIRE(dg[1] == Approx(-0.25));
  }
  SECTION("matches central differences through the softmax") {
    const double tau = 0.7;
    auto state = mpe::GroupPrecisionState::zeros(1, 5, tau);
    state.gamma = {0.2, -0.4, 0.1, 0.8, -0.3};
    std::vector<double> dp{0.3, -1.0, 0.5, 0.0, 2.0};
    auto p = mpe::probabilities(state, 0);
    auto dg = mpe::gamma_grad(p, dp, tau);
    const double h = 1e-6;
    for (std::size_t i = 0; i < 5; ++i) {
      auto lo = state, hi = state;
      lo.gamma[i] -= h;
      hi.gamma[i] += h;
      auto p_lo = mpe::probabilities(lo, 0);
      auto p_hi = mpe::probabilities(hi, 0);
      double f_lo = 0.0, f_hi = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        f_lo += dp[j] * p_lo[j];
        f_hi += dp[j] * p_hi[j];
      }
      const double fd = (f_hi - f_lo) / (2.0 * h);
      REQUIRE(dg[i] == Approx(fd).epsilon(1e-6).margin(1e-9));
    }
  }
}

TEST_CASE("bit_regularizer") {
  const mpe::CandidateSet cands({0, 1, 2, 3, 4, 5, 6});

  SECTION("uniform distribution over 0..6 costs the mean bit-width") {
    auto state = mpe::GroupPrecisionState::zeros(1, 7, 3e-3);
    std::vector<double> s{1.0};
    auto r = mpe::bit_regularizer(state, cands, s, 1.0);
    REQUIRE(r.loss == Approx(3.0));
  }
  SECTION("a dropped group costs nothing") {
    auto state = mpe::GroupPrecisionState::zeros(1, 7, 1e-2);
    state.gamma[0] = 5.0;  // bit 0 gets essentially all mass
    std::vector<double> s{1.0};
    auto r = mpe::bit_regularizer(state, cands, s, 123.0);
    REQUIRE(r.loss == Approx(0.0).margin(1e-10));
  }
  SECTION("penalty is inversely weighted by group frequency") {
    auto state = mpe::GroupPrecisionState::zeros(2, 7, 3e-3);
    std::vector<double> s{10.0, 1.0};
    auto r = mpe::bit_regularizer(state, cands, s, 0.5);
    // identical p rows: contributions are lambda*3/10 and lambda*3/1.
    REQUIRE(r.loss == Approx(0.5 * 3.0 / 10.0 + 0.5 * 3.0));
  }
  SECTION("gradient matches central differences of the full loss") {
    const double tau = 0.3, lambda = 0.8;
    auto state = mpe::GroupPrecisionState::zeros(2, 7, tau);
    std::mt19937_64 rng(23);
    std::normal_distribution<double> dist(0.0, 0.5);
    for (auto& g : state.gamma) g = dist(rng);
    std::vector<double> s{4.0, 19.0};
    auto r = mpe::bit_regularizer(state, cands, s, lambda);
    const double h = 1e-6;
    for (std::size_t i = 0; i < state.gamma.size(); ++i) {
      auto lo = state, hi = state;
      lo.gamma[i] -= h;
      hi.gamma[i] += h;
      const double f_lo = mpe::bit_regularizer(lo, cands, s, lambda).loss;
      const double f_hi = mpe::bit_regularizer(hi, cands, s, lambda).loss;
      const double fd = (f_hi - f_lo) / (2.0 * h);
      REQUIRE(r.d_gamma[i] == Approx(fd).epsilon(1e-5).margin(1e-9));
    }
  }
  SECTION("frequency sums below one are rejected") {
    auto state = mpe::GroupPrecisionState::zeros(1, 7, 3e-3);
    std::vector<double> s{0.5};
    std::vector<double> dg(7, 0.0);
    REQUIRE_THROWS_AS(mpe::bit_regularizer_accum(state, cands, s, 1.0, dg), std::invalid_argument);
  }
}

TEST_CASE("one regularizer step from uniform never raises expected bits as lambda grows") {
  const mpe::CandidateSet cands({0, 1, 2, 3, 4, 5, 6});
  std::vector<double> s{3.0};
  const double lr = 0.05;
  double prev_expected = 7.0;
  for (double lambda : {0.0, 1e-3, 1e-2, 1e-1, 1.0}) {
    auto state = mpe::GroupPrecisionState::zeros(1, 7, 0.1);
    auto r = mpe::bit_regularizer(state, cands, s, lambda);
    for (std::size_t i = 0; i < state.gamma.size(); ++i) state.gamma[i] -= lr * r.d_gamma[i];
    const double e = mpe::expected_bits(state, cands, 0);
    REQUIRE(e <= prev_expected + 1e-12);
    prev_expected = e;
  }
}

TEST_CASE("sample_precision implements the threshold rule") {
  SECTION("uniform distribution selects the largest candidate") {
    const mpe::CandidateSet cands({0, 1, 2, 3, 4, 5, 6});
    auto state = mpe::GroupPrecisionState::zeros(1, 7, 3e-3);
    std::vector<std::uint32_t> sizes{10};
    auto sp = mpe::sample_precision(state, cands, sizes);
    REQUIRE(sp.bit_of_group == std::vector<int>{6});
    REQUIRE(sp.avg_bits == Approx(6.0));
  }
  SECTION("a dominant zero bit wins when nothing else qualifies") {
    // p = (0.9, 0.06, 0.04) over {0, 3, 6}; threshold 1/6.
    const mpe::CandidateSet cands({0, 3, 6});
    auto state = mpe::GroupPrecisionState::zeros(1, 3, 1.0);
    state.gamma = {std::log(0.9), std::log(0.06), std::log(0.04)};
    std::vector<std::uint32_t> sizes{4};
    auto sp = mpe::sample_precision(state, cands, sizes);
    REQUIRE(sp.bit_of_group == std::vector<int>{0});
    REQUIRE(sp.avg_bits == Approx(0.0));
  }
  SECTION("the rule picks the max qualifying bit, not the argmax probability") {
    // p = (0.5, 0.08, 0.42); threshold 1/6 ~ 0.0833: 0.08 fails, 0.42 qualifies.
    const mpe::CandidateSet cands({0, 3, 6});
    auto state = mpe::GroupPrecisionState::zeros(1, 3, 1.0);
    state.gamma = {std::log(0.5), std::log(0.08), std::log(0.42)};
    std::vector<std::uint32_t> sizes{2};
    auto sp = mpe::sample_precision(state, cands, sizes);
    REQUIRE(sp.bit_of_group == std::vector<int>{6});
  }
  SECTION("feature-weighted average over groups") {
    const mpe::CandidateSet cands({0, 4});
    auto state = mpe::GroupPrecisionState::zeros(2, 2, 1.0);
    state.gamma = {5.0, 0.0,   // group 0 -> bit 0
                   0.0, 5.0};  // group 1 -> bit 4
    std::vector<std::uint32_t> sizes{30, 10};
    auto sp = mpe::sample_precision(state, cands, sizes);
    REQUIRE(sp.bit_of_group == std::vector<int>{0, 4});
    REQUIRE(sp.avg_bits == Approx(10.0 * 4 / 40.0));
  }
  SECTION("invariant to shifting a gamma row") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> dist(0.0, 2.0);
    const mpe::CandidateSet cands({0, 2, 4, 6});
    std::vector<std::uint32_t> sizes{1};
    for (int trial = 0; trial < 500; ++trial) {
      auto state = mpe::GroupPrecisionState::zeros(1, 4, 0.9);
      for (auto& g : state.gamma) g = dist(rng);
      auto a = mpe::sample_precision(state, cands, sizes);
      for (auto& g : state.gamma) g += 7.7;
      auto b = mpe::sample_precision(state, cands, sizes);
      REQUIRE(a.bit_of_group == b.bit_of_group);
    }
  }
  SECTION("agrees with a brute-force restatement of the rule") {
    std::mt19937_64 rng(29);
    std::normal_distribution<double> dist(0.0, 1.5);
    const mpe::CandidateSet cands({0, 1, 2, 3, 4, 5, 6});
    std::vector<std::uint32_t> sizes{1};
    for (int trial = 0; trial < 2000; ++trial) {
      auto state = mpe::GroupPrecisionState::zeros(1, 7, 0.8);
      for (auto& g : state.gamma) g = dist(rng);
      auto got = mpe::sample_precision(state, cands, sizes);

      // Brute force: enumerate qualifying candidates and take the largest.
      auto p = mpe::probabilities(state, 0);
      const double thr = 1.0 / 14.0;
      int expect = -1;
      for (std::size_t i = 0; i < 7; ++i)
        if (p[i] > thr && cands[static_cast<std::size_t>(i)] > expect) expect = cands[i];
      REQUIRE(got.bit_of_group[0] == expect);
    }
  }
}
