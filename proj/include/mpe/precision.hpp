#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "mpe/catalog.hpp"
#include "mpe/quantizer.hpp"

// Learnable bit-width distributions: per-group softmax over candidate
// bit-widths, the expected quantized embedding used during the search
// phase, its gradients, the frequency-weighted bit regularizer, and the
// threshold sampling rule that turns distributions into final bit-widths.

namespace mpe {

class CandidateSet {
 public:
  explicit CandidateSet(std::vector<int> bits) : bits_(std::move(bits)) {
    if (bits_.empty()) throw std::invalid_argument("CandidateSet: needs at least one bit-width");
    if (!std::is_sorted(bits_.begin(), bits_.end()) ||
        std::adjacent_find(bits_.begin(), bits_.end()) != bits_.end())
      throw std::invalid_argument("CandidateSet: bit-widths must be strictly increasing");
    for (int b : bits_)
      if (b < 0 || b > kMaxBits) throw std::invalid_argument("CandidateSet: bit-width out of range");
  }

  std::size_t size() const { return bits_.size(); }
  const std::vector<int>& bits() const { return bits_; }
  int operator[](std::size_t i) const { return bits_[i]; }
  bool has_zero() const { return !bits_.empty() && bits_.front() == 0; }

 private:
  std::vector<int> bits_;
};

// Per-group logits gamma (zero-initialized: every candidate starts equally
// likely) and the softmax temperature.
struct GroupPrecisionState {
  std::size_t groups = 0;
  std::size_t num_candidates = 0;
  double tau = 3e-3;
  std::vector<double> gamma;  // row-major groups x num_candidates

  static GroupPrecisionState zeros(std::size_t groups, std::size_t num_candidates, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("GroupPrecisionState: tau must be positive");
    GroupPrecisionState s;
    s.groups = groups;
    s.num_candidates = num_candidates;
    s.tau = tau;
    s.gamma.assign(groups * num_candidates, 0.0);
    return s;
  }

  std::span<const double> row(std::size_t k) const {
    return {gamma.data() + k * num_candidates, num_candidates};
  }
  std::span<double> row(std::size_t k) {
    return {gamma.data() + k * num_candidates, num_candidates};
  }
};

// Max-subtracted softmax of gamma_k / tau.
inline void probabilities(const GroupPrecisionState& state, std::size_t k, std::span<double> out) {
  if (k >= state.groups) throw std::out_of_range("probabilities: group index out of range");
  if (out.size() != state.num_candidates) throw std::invalid_argument("probabilities: bad output size");
  const auto g = state.row(k);
  double top = g[0];
  for (double v : g) top = std::max(top, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    out[i] = std::exp((g[i] - top) / state.tau);
    sum += out[i];
  }
  for (auto& p : out) p /= sum;
}

inline std::vector<double> probabilities(const GroupPrecisionState& state, std::size_t k) {
  std::vector<double> p(state.num_candidates);
  probabilities(state, k, p);
  return p;
}

// Expected quantized embedding: sum_i p_i * Q(e, b_i); the b = 0 term
// contributes the zero vector.
inline void mixture_forward(std::span<const double> e, const QuantizerParams& params,
                            const CandidateSet& cands, std::span<const double> p,
                            std::span<double> out) {
  if (p.size() != cands.size()) throw std::invalid_argument("mixture_forward: |p| != m");
  if (e.size() != params.dim() || out.size() != e.size())
    throw std::invalid_argument("mixture_forward: dimension mismatch");
  std::fill(out.begin(), out.end(), 0.0);
  const auto& beta = params.offsets();
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const int b = cands[i];
    if (b == 0) continue;
    const double alpha = params.step_for(b);
    const double pi = p[i];
    for (std::size_t j = 0; j < e.size(); ++j)
      out[j] += pi * quantize_scalar(e[j], alpha, beta[j], b).value;
  }
}

inline std::vector<double> mixture_forward(std::span<const double> e, const QuantizerParams& params,
                                           const CandidateSet& cands, std::span<const double> p) {
  std::vector<double> out(e.size());
  mixture_forward(e, params, cands, p, out);
  return out;
}

// Accumulating backward pass through the mixture. All outputs are "+=" so a
// trainer can funnel many lookups into shared buffers:
//   d_e      (dim)    gradient to the embedding row
//   d_step   (m)      gradient to the per-candidate step size (0 for b = 0)
//   d_offset (dim)    gradient to the shared offsets
//   d_prob   (m)      gradient to the probability vector
inline void mixture_backward_accum(std::span<const double> e, const QuantizerParams& params,
                                   const CandidateSet& cands, std::span<const double> p,
                                   std::span<const double> upstream, std::span<double> d_e,
                                   std::span<double> d_step, std::span<double> d_offset,
                                   std::span<double> d_prob) {
  if (p.size() != cands.size() || d_prob.size() != cands.size() || d_step.size() != cands.size())
    throw std::invalid_argument("mixture_backward: |p| != m");
  if (e.size() != params.dim() || upstream.size() != e.size() || d_e.size() != e.size() ||
      d_offset.size() != e.size())
    throw std::invalid_argument("mixture_backward: dimension mismatch");
  const auto& beta = params.offsets();
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const int b = cands[i];
    if (b == 0) continue;  // zero vector: no gradient to anything, d_prob term is 0
    const double alpha = params.step_for(b);
    const double pi = p[i];
    double dp = 0.0;
    for (std::size_t j = 0; j < e.size(); ++j) {
      const double up = upstream[j];
      const QuantGrad g = quantize_grad(e[j], alpha, beta[j], b, up);
      d_e[j] += pi * g.d_theta;
      d_step[i] += pi * g.d_alpha;
      d_offset[j] += pi * g.d_beta;
      dp += up * quantize_scalar(e[j], alpha, beta[j], b).value;
    }
    d_prob[i] += dp;
  }
}

struct MixtureGrad {
  std::vector<double> d_embedding;
  std::vector<double> d_step;
  std::vector<double> d_offset;
  std::vector<double> d_prob;
};

inline MixtureGrad mixture_backward(std::span<const double> e, const QuantizerParams& params,
                                    const CandidateSet& cands, std::span<const double> p,
                                    std::span<const double> upstream) {
  MixtureGrad g;
  g.d_embedding.assign(e.size(), 0.0);
  g.d_step.assign(cands.size(), 0.0);
  g.d_offset.assign(e.size(), 0.0);
  g.d_prob.assign(cands.size(), 0.0);
  mixture_backward_accum(e, params, cands, p, upstream, g.d_embedding, g.d_step, g.d_offset, g.d_prob);
  return g;
}

// Softmax Jacobian: d_gamma_i = (1/tau) p_i (d_p_i - sum_j p_j d_p_j).
inline void gamma_grad_accum(std::span<const double> p, std::span<const double> d_prob, double tau,
                             std::span<double> d_gamma) {
  if (p.size() != d_prob.size() || d_gamma.size() != p.size())
    throw std::invalid_argument("gamma_grad: size mismatch");
  double mean = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) mean += p[j] * d_prob[j];
  for (std::size_t i = 0; i < p.size(); ++i) d_gamma[i] += p[i] * (d_prob[i] - mean) / tau;
}

inline std::vector<double> gamma_grad(std::span<const double> p, std::span<const double> d_prob,
                                      double tau) {
  std::vector<double> d(p.size(), 0.0);
  gamma_grad_accum(p, d_prob, tau, d);
  return d;
}

// Expected-bit-width regularizer: lambda * sum_j (1/s_j) sum_i b_i p^j_i.
// Returns the loss and accumulates the gamma gradient (row-major g x m).
inline double bit_regularizer_accum(const GroupPrecisionState& state, const CandidateSet& cands,
                                    std::span<const double> freq_sums, double lambda,
                                    std::span<double> d_gamma) {
  if (freq_sums.size() != state.groups) throw std::invalid_argument("bit_regularizer: |s| != groups");
  if (cands.size() != state.num_candidates)
    throw std::invalid_argument("bit_regularizer: candidate count mismatch");
  if (d_gamma.size() != state.gamma.size())
    throw std::invalid_argument("bit_regularizer: gradient size mismatch");
  if (lambda < 0.0) throw std::invalid_argument("bit_regularizer: lambda must be nonnegative");
  for (double s : freq_sums)
    if (!(s >= 1.0)) throw std::invalid_argument("bit_regularizer: frequency sums must be >= 1");

  double loss = 0.0;
  std::vector<double> p(state.num_candidates);
  std::vector<double> d_prob(state.num_candidates);
  for (std::size_t k = 0; k < state.groups; ++k) {
    probabilities(state, k, p);
    double expected_bits = 0.0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      expected_bits += static_cast<double>(cands[i]) * p[i];
      d_prob[i] = lambda * static_cast<double>(cands[i]) / freq_sums[k];
    }
    loss += lambda * expected_bits / freq_sums[k];
    gamma_grad_accum(p, d_prob, state.tau,
                     d_gamma.subspan(k * state.num_candidates, state.num_candidates));
  }
  return loss;
}

struct RegularizerResult {
  double loss;
  std::vector<double> d_gamma;
};

inline RegularizerResult bit_regularizer(const GroupPrecisionState& state, const CandidateSet& cands,
                                         std::span<const double> freq_sums, double lambda) {
  RegularizerResult r;
  r.d_gamma.assign(state.gamma.size(), 0.0);
  r.loss = bit_regularizer_accum(state, cands, freq_sums, lambda, r.d_gamma);
  return r;
}

// Expected bit-width of one group under its current distribution.
inline double expected_bits(const GroupPrecisionState& state, const CandidateSet& cands,
                            std::size_t k) {
  const auto p = probabilities(state, k);
  double e = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) e += static_cast<double>(cands[i]) * p[i];
  return e;
}

struct SampledPrecision {
  std::vector<int> bit_of_group;
  double avg_bits = 0.0;  // frequency-unweighted mean over features
};

// Sampling rule: the largest candidate whose probability strictly exceeds
// 1/(2m). Always nonempty since max_i p_i >= 1/m > 1/(2m).
inline SampledPrecision sample_precision(const GroupPrecisionState& state, const CandidateSet& cands,
                                         std::span<const std::uint32_t> group_sizes) {
  if (cands.size() != state.num_candidates)
    throw std::invalid_argument("sample_precision: candidate count mismatch");
  if (group_sizes.size() != state.groups)
    throw std::invalid_argument("sample_precision: group size vector mismatch");
  const double threshold = 1.0 / (2.0 * static_cast<double>(cands.size()));
  SampledPrecision out;
  out.bit_of_group.resize(state.groups);
  std::vector<double> p(state.num_candidates);
  double weighted = 0.0;
  std::uint64_t total = 0;
  for (std::size_t k = 0; k < state.groups; ++k) {
    probabilities(state, k, p);
    int best = -1;
    for (std::size_t i = 0; i < p.size(); ++i)
      if (p[i] > threshold) best = std::max(best, cands[i]);
    if (best < 0) throw std::logic_error("sample_precision: no candidate above threshold");
    out.bit_of_group[k] = best;
    weighted += static_cast<double>(best) * group_sizes[k];
    total += group_sizes[k];
  }
  out.avg_bits = total == 0 ? 0.0 : weighted / static_cast<double>(total);
  return out;
}

inline SampledPrecision sample_precision(const GroupPrecisionState& state, const CandidateSet& cands,
                                         const GroupAssignment& groups) {
  return sample_precision(state, cands, std::span<const std::uint32_t>(groups.sizes));
}

}  // namespace mpe
