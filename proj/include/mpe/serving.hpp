#pragma once

#include <Eigen/Dense>
#include <span>
#include <stdexcept>
#include <vector>

#include "mpe/catalog.hpp"
#include "mpe/metrics.hpp"
#include "mpe/model.hpp"
#include "mpe/packed_table.hpp"

// Serving-path evaluation: embedding rows come from the packed store's
// dequantizing lookup instead of the training table. Batching and math
// mirror the trainer's predict() so scores are bit-exact against a
// checkpoint evaluated at the same sampled bit-widths.

namespace mpe {

inline void predict_packed(const Mlp& mlp, const PackedTable& table, const SampleSet& split,
                           std::span<double> out) {
  const std::size_t count = split.size();
  const std::size_t fields = split.num_fields;
  const std::size_t d = table.d;
  if (mlp.input_dim() != fields * d)
    throw std::invalid_argument("predict_packed: MLP input dim mismatch");
  constexpr std::size_t kEvalBatch = 4096;
  std::vector<double> row(d);
  Eigen::MatrixXd x;
  for (std::size_t start = 0; start < count; start += kEvalBatch) {
    const std::size_t len = std::min(kEvalBatch, count - start);
    x.resize(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(fields * d));
    for (std::size_t i = 0; i < len; ++i) {
      const auto ids = split.row(start + i);
      for (std::size_t f = 0; f < fields; ++f) {
        table.lookup(ids[f], row);
        for (std::size_t j = 0; j < d; ++j)
          x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f * d + j)) = row[j];
      }
    }
    Eigen::MatrixXd act = x;
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
      const auto& layer = mlp.layers[l];
      Eigen::MatrixXd z = act * layer.weight;
      z.rowwise() += layer.bias.transpose();
      if (l + 1 < mlp.layers.size()) act = z.cwiseMax(0.0);
      else act = std::move(z);
    }
    for (std::size_t i = 0; i < len; ++i) out[start + i] = sigmoid(act(i, 0));
  }
}

inline EvalMetrics evaluate_packed(const Mlp& mlp, const PackedTable& table,
                                   const SampleSet& split) {
  if (split.size() == 0) throw std::invalid_argument("evaluate_packed: empty split");
  std::vector<double> scores(split.size());
  predict_packed(mlp, table, split, scores);
  EvalMetrics m;
  m.auc = binary_auc(scores, split.labels);
  m.logloss = binary_logloss(scores, split.labels);
  return m;
}

}  // namespace mpe
