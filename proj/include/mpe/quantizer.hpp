#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Uniform quantizer with learnable step size and offset, plus its
// straight-through gradients. Bit-width 0 is the dropped-feature case:
// the embedding is forced to the zero vector.

namespace mpe {

inline constexpr int kMaxBits = 15;

// Integer code bounds of a signed b-bit value, b >= 1.
constexpr std::int32_t code_min(int bits) { return -(std::int32_t{1} << (bits - 1)); }
constexpr std::int32_t code_max(int bits) { return (std::int32_t{1} << (bits - 1)) - 1; }

// Round-half-to-even, independent of the ambient FP rounding mode.
inline double round_half_even(double x) {
  const double lo = std::floor(x);
  const double frac = x - lo;
  if (frac > 0.5) return lo + 1.0;
  if (frac < 0.5) return lo;
  return std::fmod(lo, 2.0) == 0.0 ? lo : lo + 1.0;
}

namespace detail {

inline void check_quant_args(double theta, double alpha, double beta, int bits) {
  if (!std::isfinite(theta) || !std::isfinite(alpha) || !std::isfinite(beta))
    throw std::domain_error("quantize: non-finite input");
  if (alpha <= 0.0) throw std::domain_error("quantize: step size must be positive");
  if (bits < 1 || bits > kMaxBits)
    throw std::domain_error("quantize: bit-width must be in [1, " + std::to_string(kMaxBits) + "]");
}

}  // namespace detail

struct QuantResult {
  double value;       // alpha * code + beta
  std::int32_t code;  // clamped integer code in [code_min(b), code_max(b)]
};

inline QuantResult quantize_scalar(double theta, double alpha, double beta, int bits) {
  detail::check_quant_args(theta, alpha, beta, bits);
  const double u = (theta - beta) / alpha;
  double r = round_half_even(u);
  r = std::clamp(r, static_cast<double>(code_min(bits)), static_cast<double>(code_max(bits)));
  const auto code = static_cast<std::int32_t>(r);
  return {alpha * r + beta, code};
}

// Reconstruction shared with the packed store so lookups are bit-exact
// against quantize_scalar.
inline double dequantize_code(std::int32_t code, double alpha, double beta) {
  return alpha * static_cast<double>(code) + beta;
}

struct QuantGrad {
  double d_theta;
  double d_alpha;
  double d_beta;
};

// Straight-through gradients of the quantizer output with respect to the
// input, the step size, and the offset, scaled by `upstream`.
inline QuantGrad quantize_grad(double theta, double alpha, double beta, int bits, double upstream) {
  detail::check_quant_args(theta, alpha, beta, bits);
  const double u = (theta - beta) / alpha;
  const double lo = code_min(bits);
  const double hi = code_max(bits);
  if (u <= lo) return {0.0, upstream * lo, upstream};
  if (u >= hi) return {0.0, upstream * hi, upstream};
  return {upstream, upstream * (round_half_even(u) - u), 0.0};
}

// One step size per nonzero candidate bit-width, one offset per embedding
// dimension. Never per-feature.
class QuantizerParams {
 public:
  QuantizerParams() = default;

  // Step sizes sized so the b-bit grid spans +-3 sigma of the initial
  // embedding distribution; offsets start at zero.
  static QuantizerParams init(std::span<const int> candidate_bits, std::size_t dim, double init_stddev) {
    QuantizerParams q;
    for (int b : candidate_bits) {
      if (b == 0) continue;
      if (b < 1 || b > kMaxBits) throw std::domain_error("QuantizerParams: bit-width out of range");
      q.bit_values_.push_back(b);
    }
    std::sort(q.bit_values_.begin(), q.bit_values_.end());
    if (std::adjacent_find(q.bit_values_.begin(), q.bit_values_.end()) != q.bit_values_.end())
      throw std::domain_error("QuantizerParams: duplicate bit-width");
    q.step_sizes_.resize(q.bit_values_.size());
    for (std::size_t i = 0; i < q.bit_values_.size(); ++i) {
      const int b = q.bit_values_[i];
      const double span = static_cast<double>(code_max(b)) - static_cast<double>(code_min(b));
      q.step_sizes_[i] = 6.0 * init_stddev / span;
    }
    q.offsets_.assign(dim, 0.0);
    return q;
  }

  static QuantizerParams from_values(std::vector<int> bits, std::vector<double> steps,
                                     std::vector<double> offsets) {
    if (bits.size() != steps.size())
      throw std::invalid_argument("QuantizerParams: bits/steps size mismatch");
    QuantizerParams q;
    q.bit_values_ = std::move(bits);
    q.step_sizes_ = std::move(steps);
    q.offsets_ = std::move(offsets);
    q.validate();
    return q;
  }

  std::size_t dim() const { return offsets_.size(); }
  const std::vector<int>& bit_values() const { return bit_values_; }
  const std::vector<double>& step_sizes() const { return step_sizes_; }
  const std::vector<double>& offsets() const { return offsets_; }
  std::vector<double>& step_sizes() { return step_sizes_; }
  std::vector<double>& offsets() { return offsets_; }

  std::size_t index_of(int bits) const {
    auto it = std::lower_bound(bit_values_.begin(), bit_values_.end(), bits);
    if (it == bit_values_.end() || *it != bits)
      throw std::out_of_range("QuantizerParams: no step size for bit-width " + std::to_string(bits));
    return static_cast<std::size_t>(it - bit_values_.begin());
  }

  double step_for(int bits) const { return step_sizes_[index_of(bits)]; }

  // Keeps every alpha strictly positive after optimizer steps.
  void clamp_steps(double floor) {
    for (double& a : step_sizes_) a = std::max(a, floor);
  }

  void validate() const {
    if (!std::is_sorted(bit_values_.begin(), bit_values_.end()) ||
        std::adjacent_find(bit_values_.begin(), bit_values_.end()) != bit_values_.end())
      throw std::domain_error("QuantizerParams: bit-widths must be strictly increasing");
    for (int b : bit_values_)
      if (b < 1 || b > kMaxBits) throw std::domain_error("QuantizerParams: bit-width out of range");
    for (double a : step_sizes_)
      if (!(a > 0.0) || !std::isfinite(a)) throw std::domain_error("QuantizerParams: step size must be positive");
    for (double b : offsets_)
      if (!std::isfinite(b)) throw std::domain_error("QuantizerParams: non-finite offset");
  }

 private:
  std::vector<int> bit_values_;
  std::vector<double> step_sizes_;
  std::vector<double> offsets_;
};

inline constexpr double kStepSizeFloor = 1e-8;

// Componentwise quantization of an embedding vector. bits == 0 zeroes the
// output; codes are zero as well.
inline void quantize_vector(std::span<const double> e, const QuantizerParams& params, int bits,
                            std::span<double> out_value, std::span<std::int32_t> out_code) {
  if (e.size() != params.dim() || out_value.size() != e.size() || out_code.size() != e.size())
    throw std::invalid_argument("quantize_vector: dimension mismatch");
  if (bits == 0) {
    std::fill(out_value.begin(), out_value.end(), 0.0);
    std::fill(out_code.begin(), out_code.end(), 0);
    return;
  }
  const double alpha = params.step_for(bits);
  const auto& beta = params.offsets();
  for (std::size_t j = 0; j < e.size(); ++j) {
    const QuantResult r = quantize_scalar(e[j], alpha, beta[j], bits);
    out_value[j] = r.value;
    out_code[j] = r.code;
  }
}

struct VectorQuant {
  std::vector<double> values;
  std::vector<std::int32_t> codes;
};

inline VectorQuant quantize_vector(std::span<const double> e, const QuantizerParams& params, int bits) {
  VectorQuant r;
  r.values.resize(e.size());
  r.codes.resize(e.size());
  quantize_vector(e, params, bits, r.values, r.codes);
  return r;
}

}  // namespace mpe
