#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "mpe/metrics.hpp"

using Catch::Approx;

TEST_CASE("auc on the four-point hand case") {
  std::vector<double> scores{0.1, 0.4, 0.35, 0.8};
  std::vector<std::uint8_t> labels{0, 0, 1, 1};
  REQUIRE(mpe::binary_auc(scores, labels) == Approx(0.75));
}

TEST_CASE("auc is 1 for perfectly separated scores") {
  std::vector<double> scores{0.1, 0.2, 0.3, 0.7, 0.8, 0.9};
  std::vector<std::uint8_t> labels{0, 0, 0, 1, 1, 1};
  REQUIRE(mpe::binary_auc(scores, labels) == Approx(1.0));
}

TEST_CASE("auc of identical scores is one half") {
  std::vector<double> scores(10, 0.4);
  std::vector<std::uint8_t> labels{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  REQUIRE(mpe::binary_auc(scores, labels) == Approx(0.5));
}

TEST_CASE("auc with tied runs matches pair enumeration") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> score_dist(0, 5);  // heavy ties
  std::uniform_int_distribution<int> label_dist(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> scores(50);
    std::vector<std::uint8_t> labels(50);
    int pos = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      scores[i] = score_dist(rng) / 5.0;
      labels[i] = static_cast<std::uint8_t>(label_dist(rng));
      pos += labels[i];
    }
    if (pos == 0 || pos == 50) continue;

    // Oracle: count wins + half-ties over all positive-negative pairs.
    double wins = 0.0;
    std::uint64_t pairs = 0;
    for (std::size_t a = 0; a < scores.size(); ++a) {
      if (!labels[a]) continue;
      for (std::size_t b = 0; b < scores.size(); ++b) {
        if (labels[b]) continue;
        ++pairs;
        if (scores[a] > scores[b]) wins += 1.0;
        else if (scores[a] == scores[b]) wins += 0.5;
      }
    }
    REQUIRE(mpe::binary_auc(scores, labels) == Approx(wins / pairs));
  }
}

TEST_CASE("auc of random scores concentrates near one half") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = 20000;
  std::vector<double> scores(n);
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = u(rng);
    labels[i] = u(rng) < 0.5 ? 1 : 0;
  }
  REQUIRE(std::abs(mpe::binary_auc(scores, labels) - 0.5) < 3.0 / std::sqrt(double(n)));
}

TEST_CASE("auc rejects degenerate inputs") {
  std::vector<double> scores{0.1, 0.2};
  std::vector<std::uint8_t> ones{1, 1}, zeros{0, 0};
  REQUIRE_THROWS_AS(mpe::binary_auc(scores, ones), std::invalid_argument);
  REQUIRE_THROWS_AS(mpe::binary_auc(scores, zeros), std::invalid_argument);
  REQUIRE_THROWS_AS(mpe::binary_auc({}, {}), std::invalid_argument);
}

TEST_CASE("logloss matches hand computation and clamps extremes") {
  std::vector<double> probs{0.9, 0.1};
  std::vector<std::uint8_t> labels{1, 0};
  REQUIRE(mpe::binary_logloss(probs, labels) == Approx(-std::log(0.9)));

  std::vector<double> certain{1.0, 0.0};
  std::vector<std::uint8_t> wrong{0, 1};
  const double loss = mpe::binary_logloss(certain, wrong);
  REQUIRE(std::isfinite(loss));
  REQUIRE(loss == Approx(-std::log(1e-7)));
}
