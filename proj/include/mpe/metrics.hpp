#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace mpe {

// Exact rank-statistic AUC (Mann-Whitney), averaging ranks over tied scores.
inline double binary_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: size mismatch");
  const std::size_t n = scores.size();
  if (n == 0) throw std::invalid_argument("auc: empty input");

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::uint64_t n_pos = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // 1-based ranks i+1 .. j averaged across the tie run.
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        rank_sum_pos += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::uint64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auc: both classes must be present");
  const double np = static_cast<double>(n_pos);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

// Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
inline double binary_logloss(std::span<const double> probs, std::span<const std::uint8_t> labels) {
  if (probs.size() != labels.size()) throw std::invalid_argument("logloss: size mismatch");
  if (probs.empty()) throw std::invalid_argument("logloss: empty input");
  constexpr double kEps = 1e-7;
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kEps, 1.0 - kEps);
    total += labels[i] ? -std::log(p) : -std::log(1.0 - p);
  }
  return total / static_cast<double>(probs.size());
}

struct EvalMetrics {
  double auc = 0.0;
  double logloss = 0.0;
};

}  // namespace mpe
