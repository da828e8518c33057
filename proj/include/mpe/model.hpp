#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "mpe/precision.hpp"
#include "mpe/quantizer.hpp"

// Desk-scale DLRM: an embedding table feeding a ReLU MLP with a single
// sigmoid output. Parameters live in plain buffers; Eigen carries the
// batched dense math.

namespace mpe {

inline constexpr double kEmbedInitStddev = 3e-3;

struct MlpLayer {
  Eigen::MatrixXd weight;  // in x out
  Eigen::VectorXd bias;    // out
};

struct Mlp {
  std::vector<MlpLayer> layers;

  // Kaiming-style init for ReLU stacks; biases start at zero. Weights are
  // drawn row-major so the layout pins the RNG stream.
  static Mlp init(std::size_t input_dim, std::span<const std::uint32_t> hidden,
                  std::mt19937_64& rng) {
    Mlp mlp;
    std::normal_distribution<double> norm(0.0, 1.0);
    std::size_t in = input_dim;
    std::vector<std::size_t> outs(hidden.begin(), hidden.end());
    outs.push_back(1);
    for (std::size_t out : outs) {
      MlpLayer layer;
      layer.weight.resize(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
      const double stddev = std::sqrt(2.0 / static_cast<double>(in));
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
          layer.weight(r, c) = stddev * norm(rng);
      layer.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out));
      mlp.layers.push_back(std::move(layer));
      in = out;
    }
    return mlp;
  }

  std::size_t input_dim() const {
    return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weight.rows());
  }
};

struct ModelState {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> embeddings;  // n x d row-major
  Mlp mlp;
  QuantizerParams quant;
  GroupPrecisionState gamma_state;  // groups == 0 outside the search phase

  std::span<double> embedding_row(std::size_t id) {
    return {embeddings.data() + id * d, d};
  }
  std::span<const double> embedding_row(std::size_t id) const {
    return {embeddings.data() + id * d, d};
  }

  static ModelState init(std::size_t n, std::size_t d, std::size_t num_fields,
                         std::span<const std::uint32_t> hidden, std::span<const int> candidate_bits,
                         std::uint64_t seed) {
    ModelState m;
    m.n = n;
    m.d = d;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> norm(0.0, kEmbedInitStddev);
    m.embeddings.resize(n * d);
    for (auto& x : m.embeddings) x = norm(rng);
    m.mlp = Mlp::init(num_fields * d, hidden, rng);
    m.quant = QuantizerParams::init(candidate_bits, d, kEmbedInitStddev);
    return m;
  }
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace mpe
