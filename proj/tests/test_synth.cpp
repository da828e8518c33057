#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <sstream>

#include "mpe/metrics.hpp"
#include "mpe/synth.hpp"

namespace {

std::pair<std::string, std::string> run(const mpe::SynthSpec& spec) {
  std::ostringstream tsv, sidecar;
  mpe::generate(spec, tsv, sidecar);
  return {tsv.str(), sidecar.str()};
}

}  // namespace

TEST_CASE("identical spec and seed produce byte-identical output") {
  mpe::SynthSpec spec;
  spec.num_fields = 3;
  spec.features_per_field = 100;
  spec.num_samples = 2000;
  spec.seed = 77;
  auto [tsv1, side1] = run(spec);
  auto [tsv2, side2] = run(spec);
  REQUIRE(tsv1 == tsv2);
  REQUIRE(side1 == side2);

  spec.seed = 78;
  auto [tsv3, side3] = run(spec);
  REQUIRE(tsv1 != tsv3);
}

TEST_CASE("top token frequency tracks the zipf prediction") {
  mpe::SynthSpec spec;
  spec.num_fields = 1;
  spec.features_per_field = 1000;
  spec.zipf_exponent = 1.1;
  spec.num_samples = 100000;
  spec.seed = 5;
  auto [tsv, side] = run(spec);

  std::istringstream is(tsv);
  std::string line;
  std::uint64_t top = 0, total = 0;
  while (std::getline(is, line)) {
    ++total;
    if (line.substr(line.find('\t') + 1) == "v00000") ++top;
  }
  REQUIRE(total == spec.num_samples);

  double mass = 0.0;
  for (std::uint32_t r = 0; r < spec.features_per_field; ++r)
    mass += std::pow(r + 1.0, -spec.zipf_exponent);
  const double predicted = 1.0 / mass;
  const double observed = static_cast<double>(top) / static_cast<double>(total);
  REQUIRE(observed > 0.8 * predicted);
  REQUIRE(observed < 1.2 * predicted);
}

TEST_CASE("zero informative fraction yields feature-independent labels") {
  mpe::SynthSpec spec;
  spec.num_fields = 2;
  spec.features_per_field = 50;
  spec.informative_fraction = 0.0;
  spec.num_samples = 20000;
  spec.seed = 9;
  auto [tsv, side] = run(spec);

  // Any token-derived score must have AUC ~ 0.5. Use a hash of the row's
  // tokens as the score.
  std::istringstream is(tsv);
  std::string line;
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  while (std::getline(is, line)) {
    labels.push_back(line[0] == '1' ? 1 : 0);
    scores.push_back(static_cast<double>(std::hash<std::string>{}(line.substr(2)) % 100003));
  }
  const double auc = mpe::binary_auc(scores, labels);
  REQUIRE(std::abs(auc - 0.5) < 3.0 / std::sqrt(static_cast<double>(labels.size())));

  // All sidecar weights are zero.
  std::istringstream ss(side);
  while (std::getline(ss, line)) REQUIRE(line.substr(line.find('\t') + 1) == "0");
}

TEST_CASE("the intercept steers the positive ratio") {
  mpe::SynthSpec spec;
  spec.num_fields = 5;
  spec.features_per_field = 500;
  spec.informative_fraction = 0.1;
  spec.logit_scale = 0.5;
  spec.intercept = std::log(0.25 / 0.75);  // target ratio 0.25
  spec.num_samples = 100000;
  spec.seed = 13;
  auto [tsv, side] = run(spec);

  std::istringstream is(tsv);
  std::string line;
  std::uint64_t pos = 0, total = 0;
  while (std::getline(is, line)) {
    ++total;
    pos += line[0] == '1';
  }
  const double ratio = static_cast<double>(pos) / static_cast<double>(total);
  REQUIRE(std::abs(ratio - 0.25) < 0.02);
}

TEST_CASE("every token in the TSV appears in the sidecar") {
  mpe::SynthSpec spec;
  spec.num_fields = 2;
  spec.features_per_field = 40;
  spec.num_samples = 500;
  spec.seed = 3;
  auto [tsv, side] = run(spec);

  std::set<std::string> sidecar_keys;
  std::istringstream ss(side);
  std::string line;
  while (std::getline(ss, line)) sidecar_keys.insert(line.substr(0, line.find('\t')));

  std::istringstream is(tsv);
  while (std::getline(is, line)) {
    std::size_t start = line.find('\t') + 1;
    std::uint32_t field = 0;
    while (start != 0 && start <= line.size()) {
      std::size_t end = line.find('\t', start);
      const std::string tok = line.substr(start, end == std::string::npos ? end : end - start);
      REQUIRE(sidecar_keys.count("f" + std::to_string(field) + ":" + tok) == 1);
      ++field;
      start = end == std::string::npos ? 0 : end + 1;
    }
    REQUIRE(field == spec.num_fields);
  }
}

TEST_CASE("degenerate specs are rejected") {
  mpe::SynthSpec spec;
  spec.num_fields = 0;
  std::ostringstream a, b;
  REQUIRE_THROWS_AS(mpe::generate(spec, a, b), std::invalid_argument);
  spec.num_fields = 1;
  spec.num_samples = 0;
  REQUIRE_THROWS_AS(mpe::generate(spec, a, b), std::invalid_argument);
}
