#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

// Synthetic click-log generator: Zipf-distributed tokens per field and a
// planted linear logit over a subset of "informative" features, so bit
// allocation can be validated against known ground truth. The correlation
// knob controls how strongly informative features concentrate in the
// frequent ranks.

namespace mpe {

struct SynthSpec {
  std::uint32_t num_fields = 5;
  std::uint32_t features_per_field = 2000;
  double zipf_exponent = 1.1;
  double informative_fraction = 0.1;
  double freq_importance_correlation = 1.0;  // 1: informative = most frequent, 0: random
  double logit_scale = 1.0;
  double noise_std = 0.0;
  double intercept = 0.0;  // bias toward a target positive ratio
  std::uint64_t num_samples = 100000;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_fields == 0) throw std::invalid_argument("synth: num_fields must be >= 1");
    if (features_per_field == 0) throw std::invalid_argument("synth: features_per_field must be >= 1");
    if (num_samples == 0) throw std::invalid_argument("synth: num_samples must be >= 1");
    if (zipf_exponent <= 0.0) throw std::invalid_argument("synth: zipf_exponent must be positive");
    if (informative_fraction < 0.0 || informative_fraction > 1.0)
      throw std::invalid_argument("synth: informative_fraction must be in [0, 1]");
    if (freq_importance_correlation < 0.0 || freq_importance_correlation > 1.0)
      throw std::invalid_argument("synth: freq_importance_correlation must be in [0, 1]");
    if (logit_scale <= 0.0) throw std::invalid_argument("synth: logit_scale must be positive");
    if (noise_std < 0.0) throw std::invalid_argument("synth: noise_std must be nonnegative");
  }
};

namespace detail {

// Zipf(s) over ranks 0..V-1: P(r) proportional to 1/(r+1)^s.
inline std::vector<double> zipf_cdf(std::uint32_t vocab, double exponent) {
  std::vector<double> cdf(vocab);
  double total = 0.0;
  for (std::uint32_t r = 0; r < vocab; ++r) {
    total += std::pow(static_cast<double>(r) + 1.0, -exponent);
    cdf[r] = total;
  }
  for (auto& c : cdf) c /= total;
  return cdf;
}

inline std::uint32_t sample_cdf(const std::vector<double>& cdf, double u) {
  auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) return static_cast<std::uint32_t>(cdf.size() - 1);
  return static_cast<std::uint32_t>(it - cdf.begin());
}

inline std::string rank_token(std::uint32_t rank) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "v%05u", rank);
  return buf;
}

}  // namespace detail

// Emits TSV rows ("label \t token per field") to `tsv` and the ground-truth
// importance sidecar ("f<field>:<token> \t latent_weight") to `sidecar`.
inline void generate(const SynthSpec& spec, std::ostream& tsv, std::ostream& sidecar) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> norm(0.0, 1.0);

  const std::uint32_t V = spec.features_per_field;
  const auto cdf = detail::zipf_cdf(V, spec.zipf_exponent);

  // Latent weights: k informative ranks per field, floor(c*k) taken from the
  // top of the frequency order, the rest sampled uniformly from the remainder.
  std::vector<std::vector<double>> weight(spec.num_fields, std::vector<double>(V, 0.0));
  const auto k = static_cast<std::uint32_t>(std::llround(spec.informative_fraction * V));
  const auto k_top =
      std::min(k, static_cast<std::uint32_t>(std::llround(spec.freq_importance_correlation * k)));
  for (std::uint32_t f = 0; f < spec.num_fields; ++f) {
    std::vector<std::uint32_t> chosen;
    for (std::uint32_t r = 0; r < k_top; ++r) chosen.push_back(r);
    if (k > k_top) {
      std::vector<std::uint32_t> rest(V - k_top);
      std::iota(rest.begin(), rest.end(), k_top);
      std::shuffle(rest.begin(), rest.end(), rng);
      chosen.insert(chosen.end(), rest.begin(), rest.begin() + (k - k_top));
    }
    for (auto r : chosen) weight[f][r] = norm(rng);
  }

  char line[64];
  for (std::uint64_t i = 0; i < spec.num_samples; ++i) {
    double logit = spec.intercept;
    std::string row;
    for (std::uint32_t f = 0; f < spec.num_fields; ++f) {
      const std::uint32_t r = detail::sample_cdf(cdf, unit(rng));
      logit += spec.logit_scale * weight[f][r];
      row += '\t';
      row += detail::rank_token(r);
    }
    if (spec.noise_std > 0.0) logit += spec.noise_std * norm(rng);
    const double p = 1.0 / (1.0 + std::exp(-logit));
    const int label = unit(rng) < p ? 1 : 0;
    std::snprintf(line, sizeof(line), "%d", label);
    tsv << line << row << '\n';
  }
  if (!tsv) throw std::runtime_error("synth: TSV write failed");

  char wbuf[64];
  for (std::uint32_t f = 0; f < spec.num_fields; ++f) {
    for (std::uint32_t r = 0; r < V; ++r) {
      std::snprintf(wbuf, sizeof(wbuf), "%.17g", weight[f][r]);
      sidecar << 'f' << f << ':' << detail::rank_token(r) << '\t' << wbuf << '\n';
    }
  }
  if (!sidecar) throw std::runtime_error("synth: sidecar write failed");
}

}  // namespace mpe
