#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpe/catalog.hpp"
#include "mpe/io.hpp"
#include "mpe/metrics.hpp"
#include "mpe/model.hpp"
#include "mpe/precision.hpp"

// Three-phase training pipeline: full-precision baseline, mixed-precision
// search (expected quantized embeddings + bit regularizer), and retraining
// at the sampled bit-widths. Single-threaded and deterministic: identical
// (config, seed, data) reproduce identical trajectories.

namespace mpe {

enum class Phase { baseline, search, retrain, retrain_lth, no_retrain_eval };

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::baseline: return "baseline";
    case Phase::search: return "search";
    case Phase::retrain: return "retrain";
    case Phase::retrain_lth: return "retrain_lth";
    case Phase::no_retrain_eval: return "no_retrain_eval";
  }
  return "?";
}

inline Phase phase_from_name(const std::string& name) {
  for (Phase p : {Phase::baseline, Phase::search, Phase::retrain, Phase::retrain_lth,
                  Phase::no_retrain_eval})
    if (name == phase_name(p)) return p;
  throw std::invalid_argument("unknown phase: " + name);
}

struct TrainConfig {
  Phase phase = Phase::baseline;
  double learning_rate = 1e-3;
  std::optional<double> gamma_learning_rate;  // defaults to learning_rate
  double weight_decay = 0.0;
  std::uint32_t batch_size = 512;
  std::uint32_t epochs = 5;
  double lambda = 0.0;
  double tau = 3e-3;
  std::uint32_t group_size = 128;
  std::vector<int> candidate_bits{0, 1, 2, 3, 4, 5, 6};
  std::vector<std::uint32_t> hidden_sizes{64, 32};
  std::uint64_t seed = 1;
  bool record_step_losses = false;

  double gamma_lr() const { return gamma_learning_rate.value_or(learning_rate); }
};

struct EpochMetrics {
  Phase phase;
  std::uint32_t epoch;
  double train_loss;
  double valid_auc;
  double valid_logloss;
  double avg_expected_bits;
};

// ---- Checkpoint ("MPECKPT1") ----

struct Checkpoint {
  Phase phase = Phase::baseline;
  std::uint64_t catalog_hash = 0;
  std::uint64_t n = 0;
  std::uint32_t d = 0;
  std::uint32_t num_fields = 0;
  std::uint32_t group_size = 0;
  std::uint64_t groups = 0;
  double tau = 3e-3;
  std::vector<int> candidate_bits;
  std::vector<std::uint32_t> hidden_sizes;
  std::uint64_t seed = 0;
  double best_valid_auc = 0.0;
  std::uint32_t epochs_run = 0;

  // Final (best-validation) parameters.
  std::vector<double> embeddings;
  QuantizerParams quant;
  Mlp mlp;
  std::vector<double> gamma;      // search phase only
  std::vector<int> sampled_bits;  // retrain-family phases only

  // Search-phase initial values, kept so retraining can reset embeddings
  // (MPE) or everything (LTH variant).
  std::vector<double> init_embeddings;
  std::vector<double> init_step_sizes;
  std::vector<double> init_offsets;
  Mlp init_mlp;
};

inline constexpr std::string_view kCheckpointMagic = "MPECKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_mlp(std::ostream& os, const Mlp& mlp) {
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(mlp.layers.size()));
  for (const auto& layer : mlp.layers) {
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(layer.weight.rows()));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(layer.weight.cols()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) io::write_f64(os, layer.weight(r, c));
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) io::write_f64(os, layer.bias(i));
  }
}

inline Mlp read_mlp(std::istream& is) {
  Mlp mlp;
  const auto layers = io::read_le<std::uint32_t>(is);
  for (std::uint32_t l = 0; l < layers; ++l) {
    MlpLayer layer;
    const auto rows = io::read_le<std::uint32_t>(is);
    const auto cols = io::read_le<std::uint32_t>(is);
    layer.weight.resize(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) layer.weight(r, c) = io::read_f64(is);
    layer.bias.resize(cols);
    for (std::uint32_t i = 0; i < cols; ++i) layer.bias(i) = io::read_f64(is);
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  io::write_magic(os, kCheckpointMagic);
  io::write_le<std::uint32_t>(os, kCheckpointVersion);
  io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(ckpt.phase));
  io::write_le<std::uint64_t>(os, ckpt.catalog_hash);
  io::write_le<std::uint64_t>(os, ckpt.n);
  io::write_le<std::uint32_t>(os, ckpt.d);
  io::write_le<std::uint32_t>(os, ckpt.num_fields);
  io::write_le<std::uint32_t>(os, ckpt.group_size);
  io::write_le<std::uint64_t>(os, ckpt.groups);
  io::write_f64(os, ckpt.tau);
  io::write_i32_vec(os, ckpt.candidate_bits);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.hidden_sizes.size()));
  for (auto h : ckpt.hidden_sizes) io::write_le<std::uint32_t>(os, h);
  io::write_le<std::uint64_t>(os, ckpt.seed);
  io::write_f64(os, ckpt.best_valid_auc);
  io::write_le<std::uint32_t>(os, ckpt.epochs_run);

  io::write_f64_vec(os, ckpt.embeddings);
  io::write_i32_vec(os, ckpt.quant.bit_values());
  io::write_f64_vec(os, ckpt.quant.step_sizes());
  io::write_f64_vec(os, ckpt.quant.offsets());
  detail::write_mlp(os, ckpt.mlp);
  io::write_f64_vec(os, ckpt.gamma);
  io::write_i32_vec(os, ckpt.sampled_bits);
  io::write_f64_vec(os, ckpt.init_embeddings);
  io::write_f64_vec(os, ckpt.init_step_sizes);
  io::write_f64_vec(os, ckpt.init_offsets);
  detail::write_mlp(os, ckpt.init_mlp);
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  auto os = io::open_out(path);
  save_checkpoint(os, ckpt);
}

inline Checkpoint load_checkpoint(std::istream& is) {
  io::expect_magic(is, kCheckpointMagic);
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.phase = static_cast<Phase>(io::read_le<std::uint8_t>(is));
  ckpt.catalog_hash = io::read_le<std::uint64_t>(is);
  ckpt.n = io::read_le<std::uint64_t>(is);
  ckpt.d = io::read_le<std::uint32_t>(is);
  ckpt.num_fields = io::read_le<std::uint32_t>(is);
  ckpt.group_size = io::read_le<std::uint32_t>(is);
  ckpt.groups = io::read_le<std::uint64_t>(is);
  ckpt.tau = io::read_f64(is);
  ckpt.candidate_bits = io::read_i32_vec(is);
  const auto nh = io::read_le<std::uint32_t>(is);
  ckpt.hidden_sizes.resize(nh);
  for (auto& h : ckpt.hidden_sizes) h = io::read_le<std::uint32_t>(is);
  ckpt.seed = io::read_le<std::uint64_t>(is);
  ckpt.best_valid_auc = io::read_f64(is);
  ckpt.epochs_run = io::read_le<std::uint32_t>(is);

  ckpt.embeddings = io::read_f64_vec(is);
  auto bits = io::read_i32_vec(is);
  auto steps = io::read_f64_vec(is);
  auto offsets = io::read_f64_vec(is);
  ckpt.quant = QuantizerParams::from_values(std::move(bits), std::move(steps), std::move(offsets));
  ckpt.mlp = detail::read_mlp(is);
  ckpt.gamma = io::read_f64_vec(is);
  ckpt.sampled_bits = io::read_i32_vec(is);
  ckpt.init_embeddings = io::read_f64_vec(is);
  ckpt.init_step_sizes = io::read_f64_vec(is);
  ckpt.init_offsets = io::read_f64_vec(is);
  ckpt.init_mlp = detail::read_mlp(is);
  return ckpt;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  auto is = io::open_in(path);
  return load_checkpoint(is);
}

// ---- Trainer ----

enum class EmbedMode { full, mixture, sampled };

struct Gradients {
  std::vector<double> d_embeddings;       // n x d, rows zeroed between steps
  std::vector<std::uint32_t> touched;     // embedding rows hit this batch
  std::vector<Eigen::MatrixXd> d_weight;
  std::vector<Eigen::VectorXd> d_bias;
  std::vector<double> d_step_candidate;   // aligned with the candidate set
  std::vector<double> d_offset;           // per dimension
  std::vector<double> d_gamma;            // groups x m
};

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const FeatureCatalog& catalog, const GroupAssignment& groups,
          const Dataset& data)
      : cfg_(cfg),
        catalog_(catalog),
        groups_(groups),
        data_(data),
        cands_(cfg.candidate_bits) {
    if (groups_.group_size != cfg_.group_size)
      throw std::invalid_argument("trainer: group assignment does not match config group_size");
    n_ = catalog_.num_features();
    d_ = catalog_.embedding_dim;
    fields_ = static_cast<std::uint32_t>(catalog_.num_fields());
    if (data_.train.num_fields != fields_)
      throw std::invalid_argument("trainer: dataset fields do not match catalog");
    mode_ = embed_mode(cfg_.phase);
  }

  static EmbedMode embed_mode(Phase phase) {
    switch (phase) {
      case Phase::baseline: return EmbedMode::full;
      case Phase::search: return EmbedMode::mixture;
      default: return EmbedMode::sampled;
    }
  }

  void init_fresh() {
    model_ = ModelState::init(n_, d_, fields_, cfg_.hidden_sizes, cfg_.candidate_bits, cfg_.seed);
    if (cfg_.phase == Phase::search) {
      model_.gamma_state =
          GroupPrecisionState::zeros(groups_.num_groups(), cands_.size(), cfg_.tau);
    }
    reset_optimizer();
  }

  void load_model(std::vector<double> embeddings, QuantizerParams quant, Mlp mlp) {
    if (embeddings.size() != n_ * d_) throw std::invalid_argument("trainer: embedding shape mismatch");
    model_.n = n_;
    model_.d = d_;
    model_.embeddings = std::move(embeddings);
    model_.quant = std::move(quant);
    model_.mlp = std::move(mlp);
    if (model_.quant.dim() != d_) throw std::invalid_argument("trainer: offset shape mismatch");
    if (model_.mlp.input_dim() != fields_ * d_)
      throw std::invalid_argument("trainer: MLP input dim mismatch");
    if (cfg_.phase == Phase::search)
      model_.gamma_state = GroupPrecisionState::zeros(groups_.num_groups(), cands_.size(), cfg_.tau);
    reset_optimizer();
  }

  void set_sampled(const SampledPrecision& sampled) {
    if (sampled.bit_of_group.size() != groups_.num_groups())
      throw std::invalid_argument("trainer: sampled precision group count mismatch");
    for (int b : sampled.bit_of_group)
      if (b != 0) model_.quant.index_of(b);  // throws if the step size is missing
    sampled_ = sampled;
  }

  ModelState& model() { return model_; }
  const ModelState& model() const { return model_; }
  const Gradients& gradients() const { return grads_; }
  const SampledPrecision& sampled() const { return sampled_; }

  // Mean loss over the batch (cross-entropy, plus the bit regularizer in
  // search mode). Fills grads_.
  double forward_backward(std::span<const std::uint32_t> sample_idx) {
    zero_grads();
    const double loss = forward(sample_idx, /*with_grad=*/true);
    backward(sample_idx);
    return loss;
  }

  void zero_grads() {
    for (auto id : grads_.touched) {
      const std::size_t base = static_cast<std::size_t>(id) * d_;
      std::fill_n(grads_.d_embeddings.begin() + base, d_, 0.0);
    }
    grads_.touched.clear();
    for (auto& w : grads_.d_weight) w.setZero();
    for (auto& b : grads_.d_bias) b.setZero();
    std::fill(grads_.d_step_candidate.begin(), grads_.d_step_candidate.end(), 0.0);
    std::fill(grads_.d_offset.begin(), grads_.d_offset.end(), 0.0);
    std::fill(grads_.d_gamma.begin(), grads_.d_gamma.end(), 0.0);
  }

  Gradients& mutable_gradients() { return grads_; }

  double batch_loss(std::span<const std::uint32_t> sample_idx) {
    return forward(sample_idx, /*with_grad=*/false);
  }

  void adam_step() {
    ++step_;
    const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step_));
    const double lr = cfg_.learning_rate;
    const double wd = cfg_.weight_decay;

    // Embedding rows touched this batch (lazy Adam, global step counter).
    std::sort(grads_.touched.begin(), grads_.touched.end());
    grads_.touched.erase(std::unique(grads_.touched.begin(), grads_.touched.end()),
                         grads_.touched.end());
    for (auto id : grads_.touched) {
      const std::size_t base = static_cast<std::size_t>(id) * d_;
      for (std::size_t j = 0; j < d_; ++j) {
        const std::size_t at = base + j;
        adam_scalar(model_.embeddings[at], grads_.d_embeddings[at], adam_m_emb_[at], adam_v_emb_[at],
                    c1, c2, lr, wd);
        grads_.d_embeddings[at] = 0.0;
      }
    }
    grads_.touched.clear();

    for (std::size_t l = 0; l < model_.mlp.layers.size(); ++l) {
      auto& layer = model_.mlp.layers[l];
      adam_tensor(layer.weight.data(), grads_.d_weight[l].data(), adam_m_w_[l].data(),
                  adam_v_w_[l].data(), static_cast<std::size_t>(layer.weight.size()), c1, c2, lr, wd);
      adam_tensor(layer.bias.data(), grads_.d_bias[l].data(), adam_m_b_[l].data(),
                  adam_v_b_[l].data(), static_cast<std::size_t>(layer.bias.size()), c1, c2, lr, wd);
    }

    if (trains_quant()) {
      auto& steps = model_.quant.step_sizes();
      // Fold candidate-aligned step gradients onto the nonzero bit list.
      for (std::size_t i = 0; i < cands_.size(); ++i) {
        if (cands_[i] == 0) continue;
        const std::size_t qi = model_.quant.index_of(cands_[i]);
        adam_scalar(steps[qi], grads_.d_step_candidate[i], adam_m_step_[qi], adam_v_step_[qi], c1, c2,
                    lr, 0.0);
      }
      model_.quant.clamp_steps(kStepSizeFloor);
      auto& offsets = model_.quant.offsets();
      for (std::size_t j = 0; j < d_; ++j)
        adam_scalar(offsets[j], grads_.d_offset[j], adam_m_off_[j], adam_v_off_[j], c1, c2, lr, 0.0);
    }

    if (cfg_.phase == Phase::search) {
      const double glr = cfg_.gamma_lr();
      for (std::size_t i = 0; i < model_.gamma_state.gamma.size(); ++i)
        adam_scalar(model_.gamma_state.gamma[i], grads_.d_gamma[i], adam_m_gamma_[i],
                    adam_v_gamma_[i], c1, c2, glr, 0.0);
    }
  }

  std::uint64_t optimizer_step_count() const { return step_; }

  // One full pass over the training split. Returns the sample-weighted mean
  // batch loss; optionally records every per-step loss.
  double train_epoch(std::uint32_t epoch, std::vector<double>* step_losses = nullptr) {
    const std::size_t count = data_.train.size();
    if (count == 0) throw std::invalid_argument("trainer: empty training split");
    std::vector<std::uint32_t> order(count);
    std::iota(order.begin(), order.end(), 0u);
    std::mt19937_64 rng(cfg_.seed + 0x9E3779B97F4A7C15ULL * (epoch + 1));
    std::shuffle(order.begin(), order.end(), rng);

    double total = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < count; start += cfg_.batch_size, ++batch_no) {
      const std::size_t len = std::min<std::size_t>(cfg_.batch_size, count - start);
      const std::span<const std::uint32_t> idx(order.data() + start, len);
      const double loss = forward_backward(idx);
      if (!std::isfinite(loss))
        throw std::runtime_error("trainer: non-finite loss at epoch " + std::to_string(epoch) +
                                 " batch " + std::to_string(batch_no));
      adam_step();
      if (step_losses) step_losses->push_back(loss);
      total += loss * static_cast<double>(len);
    }
    return total / static_cast<double>(count);
  }

  // AUC and clamped logloss over a split using the phase's embedding path.
  EvalMetrics evaluate(const SampleSet& split) const {
    if (split.size() == 0) throw std::invalid_argument("evaluate: empty split");
    std::vector<double> scores(split.size());
    predict(split, scores);
    EvalMetrics m;
    m.auc = binary_auc(scores, split.labels);
    m.logloss = binary_logloss(scores, split.labels);
    return m;
  }

  // Sigmoid outputs for a whole split, batched.
  void predict(const SampleSet& split, std::span<double> out) const {
    const std::size_t count = split.size();
    constexpr std::size_t kEvalBatch = 4096;
    std::vector<double> probs_row(cands_.size());
    Eigen::MatrixXd x;
    for (std::size_t start = 0; start < count; start += kEvalBatch) {
      const std::size_t len = std::min(kEvalBatch, count - start);
      x.resize(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(fields_ * d_));
      for (std::size_t i = 0; i < len; ++i) {
        const auto row = split.row(start + i);
        for (std::uint32_t f = 0; f < fields_; ++f) embed_lookup(row[f], x, i, f);
      }
      Eigen::MatrixXd act = x;
      for (std::size_t l = 0; l < model_.mlp.layers.size(); ++l) {
        const auto& layer = model_.mlp.layers[l];
        Eigen::MatrixXd z = act * layer.weight;
        z.rowwise() += layer.bias.transpose();
        if (l + 1 < model_.mlp.layers.size()) act = z.cwiseMax(0.0);
        else act = std::move(z);
      }
      for (std::size_t i = 0; i < len; ++i) out[start + i] = sigmoid(act(i, 0));
    }
  }

  // Feature-weighted expected bit-width under the current distributions.
  double avg_expected_bits() const {
    switch (mode_) {
      case EmbedMode::full: return 32.0;
      case EmbedMode::sampled: return sampled_.avg_bits;
      case EmbedMode::mixture: {
        double total = 0.0;
        for (std::size_t k = 0; k < groups_.num_groups(); ++k)
          total += expected_bits(model_.gamma_state, cands_, k) * groups_.sizes[k];
        return total / static_cast<double>(n_);
      }
    }
    return 0.0;
  }

 private:
  static constexpr double kAdamBeta1 = 0.9;
  static constexpr double kAdamBeta2 = 0.999;
  static constexpr double kAdamEps = 1e-8;

  bool trains_quant() const {
    return cfg_.phase == Phase::search || cfg_.phase == Phase::retrain ||
           cfg_.phase == Phase::retrain_lth;
  }

  void reset_optimizer() {
    step_ = 0;
    grads_.d_embeddings.assign(n_ * d_, 0.0);
    grads_.touched.clear();
    grads_.d_weight.clear();
    grads_.d_bias.clear();
    for (const auto& layer : model_.mlp.layers) {
      grads_.d_weight.emplace_back(Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()));
      grads_.d_bias.emplace_back(Eigen::VectorXd::Zero(layer.bias.size()));
    }
    grads_.d_step_candidate.assign(cands_.size(), 0.0);
    grads_.d_offset.assign(d_, 0.0);
    grads_.d_gamma.assign(model_.gamma_state.gamma.size(), 0.0);

    adam_m_emb_.assign(n_ * d_, 0.0);
    adam_v_emb_.assign(n_ * d_, 0.0);
    adam_m_w_.clear();
    adam_v_w_.clear();
    adam_m_b_.clear();
    adam_v_b_.clear();
    for (const auto& layer : model_.mlp.layers) {
      adam_m_w_.emplace_back(Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()));
      adam_v_w_.emplace_back(Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()));
      adam_m_b_.emplace_back(Eigen::VectorXd::Zero(layer.bias.size()));
      adam_v_b_.emplace_back(Eigen::VectorXd::Zero(layer.bias.size()));
    }
    adam_m_step_.assign(model_.quant.step_sizes().size(), 0.0);
    adam_v_step_.assign(model_.quant.step_sizes().size(), 0.0);
    adam_m_off_.assign(d_, 0.0);
    adam_v_off_.assign(d_, 0.0);
    adam_m_gamma_.assign(model_.gamma_state.gamma.size(), 0.0);
    adam_v_gamma_.assign(model_.gamma_state.gamma.size(), 0.0);
  }

  static void adam_scalar(double& p, double g, double& m, double& v, double c1, double c2,
                          double lr, double wd) {
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
    v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g * g;
    const double update = (m / c1) / (std::sqrt(v / c2) + kAdamEps);
    p -= lr * (update + wd * p);
  }

  static void adam_tensor(double* p, double* g, double* m, double* v, std::size_t len, double c1,
                          double c2, double lr, double wd) {
    for (std::size_t i = 0; i < len; ++i) adam_scalar(p[i], g[i], m[i], v[i], c1, c2, lr, wd);
  }

  // Writes the embedding block for (sample i, field f) into x.
  void embed_lookup(std::uint32_t id, Eigen::MatrixXd& x, std::size_t i, std::uint32_t f) const {
    const auto e = model_.embedding_row(id);
    const std::size_t col0 = static_cast<std::size_t>(f) * d_;
    switch (mode_) {
      case EmbedMode::full:
        for (std::size_t j = 0; j < d_; ++j)
          x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col0 + j)) = e[j];
        break;
      case EmbedMode::mixture: {
        scratch_embed_.resize(d_);
        const std::size_t k = groups_.group_of[id];
        mixture_forward(e, model_.quant, cands_, probs_row(k), scratch_embed_);
        for (std::size_t j = 0; j < d_; ++j)
          x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col0 + j)) = scratch_embed_[j];
        break;
      }
      case EmbedMode::sampled: {
        const int b = sampled_bit(id);
        if (b == 0) {
          for (std::size_t j = 0; j < d_; ++j)
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col0 + j)) = 0.0;
        } else {
          const double alpha = model_.quant.step_for(b);
          const auto& beta = model_.quant.offsets();
          for (std::size_t j = 0; j < d_; ++j)
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col0 + j)) =
                quantize_scalar(e[j], alpha, beta[j], b).value;
        }
        break;
      }
    }
  }

  int sampled_bit(std::uint32_t id) const {
    if (sampled_.bit_of_group.empty())
      throw std::logic_error("trainer: sampled precision not set");
    return sampled_.bit_of_group[groups_.group_of[id]];
  }

  std::span<const double> probs_row(std::size_t k) const {
    return {probs_cache_.data() + k * cands_.size(), cands_.size()};
  }

  void refresh_probs() const {
    probs_cache_.resize(groups_.num_groups() * cands_.size());
    std::vector<double> row(cands_.size());
    for (std::size_t k = 0; k < groups_.num_groups(); ++k) {
      probabilities(model_.gamma_state, k, row);
      std::copy(row.begin(), row.end(), probs_cache_.begin() + k * cands_.size());
    }
  }

  double forward(std::span<const std::uint32_t> sample_idx, bool with_grad) {
    if (sample_idx.empty()) throw std::invalid_argument("trainer: empty batch");
    const std::size_t B = sample_idx.size();
    if (mode_ == EmbedMode::mixture) refresh_probs();

    x_.resize(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(fields_ * d_));
    for (std::size_t i = 0; i < B; ++i) {
      const auto row = data_.train.row(sample_idx[i]);
      for (std::uint32_t f = 0; f < fields_; ++f) embed_lookup(row[f], x_, i, f);
    }

    const std::size_t L = model_.mlp.layers.size();
    zs_.resize(L);
    acts_.resize(L);
    const Eigen::MatrixXd* prev = &x_;
    for (std::size_t l = 0; l < L; ++l) {
      const auto& layer = model_.mlp.layers[l];
      zs_[l] = *prev * layer.weight;
      zs_[l].rowwise() += layer.bias.transpose();
      if (l + 1 < L) {
        acts_[l] = zs_[l].cwiseMax(0.0);
        prev = &acts_[l];
      }
    }

    double ce = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
      const double z = zs_[L - 1](static_cast<Eigen::Index>(i), 0);
      const double y = data_.train.labels[sample_idx[i]] ? 1.0 : 0.0;
      ce += softplus(z) - y * z;
    }
    ce /= static_cast<double>(B);

    double loss = ce;
    if (cfg_.phase == Phase::search) {
      if (with_grad) {
        loss += bit_regularizer_accum(model_.gamma_state, cands_, groups_.freq_sums, cfg_.lambda,
                                      grads_.d_gamma);
      } else {
        auto r = bit_regularizer(model_.gamma_state, cands_, groups_.freq_sums, cfg_.lambda);
        loss += r.loss;
      }
    }
    return loss;
  }

  void backward(std::span<const std::uint32_t> sample_idx) {
    const std::size_t B = sample_idx.size();
    const std::size_t L = model_.mlp.layers.size();

    dz_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(B), 1);
    for (std::size_t i = 0; i < B; ++i) {
      const double z = zs_[L - 1](static_cast<Eigen::Index>(i), 0);
      const double y = data_.train.labels[sample_idx[i]] ? 1.0 : 0.0;
      dz_(static_cast<Eigen::Index>(i), 0) = (sigmoid(z) - y) / static_cast<double>(B);
    }

    for (std::size_t l = L; l-- > 0;) {
      const auto& inputs = l == 0 ? x_ : acts_[l - 1];
      grads_.d_weight[l].noalias() += inputs.transpose() * dz_;
      grads_.d_bias[l] += dz_.colwise().sum().transpose();
      Eigen::MatrixXd da = dz_ * model_.mlp.layers[l].weight.transpose();
      if (l > 0) {
        dz_ = da.cwiseProduct((zs_[l - 1].array() > 0.0).cast<double>().matrix());
      } else {
        dx_ = std::move(da);
      }
    }

    // Embedding path.
    std::vector<double> up(d_);
    std::vector<double> d_prob(cands_.size());
    for (std::size_t i = 0; i < B; ++i) {
      const auto row = data_.train.row(sample_idx[i]);
      for (std::uint32_t f = 0; f < fields_; ++f) {
        const std::uint32_t id = row[f];
        const std::size_t col0 = static_cast<std::size_t>(f) * d_;
        for (std::size_t j = 0; j < d_; ++j)
          up[j] = dx_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col0 + j));
        const auto e = model_.embedding_row(id);
        std::span<double> d_e{grads_.d_embeddings.data() + static_cast<std::size_t>(id) * d_, d_};
        grads_.touched.push_back(id);
        switch (mode_) {
          case EmbedMode::full:
            for (std::size_t j = 0; j < d_; ++j) d_e[j] += up[j];
            break;
          case EmbedMode::mixture: {
            const std::size_t k = groups_.group_of[id];
            std::fill(d_prob.begin(), d_prob.end(), 0.0);
            mixture_backward_accum(e, model_.quant, cands_, probs_row(k), up, d_e,
                                   grads_.d_step_candidate, grads_.d_offset, d_prob);
            gamma_grad_accum(probs_row(k), d_prob, model_.gamma_state.tau,
                             {grads_.d_gamma.data() + k * cands_.size(), cands_.size()});
            break;
          }
          case EmbedMode::sampled: {
            const int b = sampled_bit(id);
            if (b == 0) break;
            const double alpha = model_.quant.step_for(b);
            const auto& beta = model_.quant.offsets();
            const std::size_t ci = candidate_index(b);
            for (std::size_t j = 0; j < d_; ++j) {
              const QuantGrad g = quantize_grad(e[j], alpha, beta[j], b, up[j]);
              d_e[j] += g.d_theta;
              grads_.d_step_candidate[ci] += g.d_alpha;
              grads_.d_offset[j] += g.d_beta;
            }
            break;
          }
        }
      }
    }
  }

  std::size_t candidate_index(int bits) const {
    const auto& b = cands_.bits();
    const auto it = std::lower_bound(b.begin(), b.end(), bits);
    if (it == b.end() || *it != bits)
      throw std::out_of_range("trainer: sampled bit-width not in the candidate set");
    return static_cast<std::size_t>(it - b.begin());
  }

  TrainConfig cfg_;
  const FeatureCatalog& catalog_;
  const GroupAssignment& groups_;
  const Dataset& data_;
  CandidateSet cands_;
  std::size_t n_ = 0, d_ = 0;
  std::uint32_t fields_ = 0;
  EmbedMode mode_ = EmbedMode::full;

  ModelState model_;
  SampledPrecision sampled_;
  Gradients grads_;
  std::uint64_t step_ = 0;

  std::vector<double> adam_m_emb_, adam_v_emb_;
  std::vector<Eigen::MatrixXd> adam_m_w_, adam_v_w_;
  std::vector<Eigen::VectorXd> adam_m_b_, adam_v_b_;
  std::vector<double> adam_m_step_, adam_v_step_, adam_m_off_, adam_v_off_;
  std::vector<double> adam_m_gamma_, adam_v_gamma_;

  mutable std::vector<double> probs_cache_;
  mutable std::vector<double> scratch_embed_;
  Eigen::MatrixXd x_, dz_, dx_;
  std::vector<Eigen::MatrixXd> zs_, acts_;
};

// ---- Phase driver ----

struct PhaseResult {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> log;
  std::vector<double> step_losses;  // filled when cfg.record_step_losses
};

// Runs one phase end to end and returns the best-validation checkpoint.
// retrain/retrain_lth/no_retrain_eval need `sampled`; retrain_lth and
// no_retrain_eval need `prior` (a search checkpoint); retrain runs from a
// fresh init when `prior` is absent, which is exactly a fixed-bit QAT run.
inline PhaseResult run_phase(const TrainConfig& cfg, const FeatureCatalog& catalog,
                             const GroupAssignment& groups, const Dataset& data,
                             const std::optional<Checkpoint>& prior = {},
                             const std::optional<SampledPrecision>& sampled = {}) {
  const bool needs_sampled = cfg.phase == Phase::retrain || cfg.phase == Phase::retrain_lth ||
                             cfg.phase == Phase::no_retrain_eval;
  if (needs_sampled && !sampled)
    throw std::invalid_argument(std::string(phase_name(cfg.phase)) + ": sampled precision required");
  if ((cfg.phase == Phase::retrain_lth || cfg.phase == Phase::no_retrain_eval) && !prior)
    throw std::invalid_argument(std::string(phase_name(cfg.phase)) + ": prior checkpoint required");

  const std::uint64_t catalog_hash = catalog.hash();
  if (prior && prior->catalog_hash != catalog_hash)
    throw std::runtime_error("run_phase: catalog hash mismatch between phases");
  if (prior && prior->group_size != cfg.group_size)
    throw std::runtime_error("run_phase: group_size differs from the prior checkpoint");

  Trainer trainer(cfg, catalog, groups, data);

  switch (cfg.phase) {
    case Phase::baseline:
    case Phase::search:
      trainer.init_fresh();
      break;
    case Phase::retrain:
      if (prior) {
        if (prior->init_embeddings.empty())
          throw std::invalid_argument("retrain: prior checkpoint lacks search-phase initial values");
        trainer.load_model(prior->init_embeddings, prior->quant, prior->mlp);
      } else {
        trainer.init_fresh();
      }
      break;
    case Phase::retrain_lth: {
      if (prior->init_embeddings.empty())
        throw std::invalid_argument("retrain_lth: prior checkpoint lacks initial values");
      auto quant0 = QuantizerParams::from_values(prior->quant.bit_values(), prior->init_step_sizes,
                                                 prior->init_offsets);
      trainer.load_model(prior->init_embeddings, std::move(quant0), prior->init_mlp);
      break;
    }
    case Phase::no_retrain_eval:
      trainer.load_model(prior->embeddings, prior->quant, prior->mlp);
      break;
  }
  if (needs_sampled) trainer.set_sampled(*sampled);

  PhaseResult result;
  Checkpoint& ckpt = result.checkpoint;
  ckpt.phase = cfg.phase;
  ckpt.catalog_hash = catalog_hash;
  ckpt.n = catalog.num_features();
  ckpt.d = catalog.embedding_dim;
  ckpt.num_fields = static_cast<std::uint32_t>(catalog.num_fields());
  ckpt.group_size = cfg.group_size;
  ckpt.groups = groups.num_groups();
  ckpt.tau = cfg.tau;
  ckpt.candidate_bits = cfg.candidate_bits;
  ckpt.hidden_sizes = cfg.hidden_sizes;
  ckpt.seed = cfg.seed;
  if (needs_sampled) ckpt.sampled_bits = sampled->bit_of_group;
  if (cfg.phase == Phase::search) {
    ckpt.init_embeddings = trainer.model().embeddings;
    ckpt.init_step_sizes = trainer.model().quant.step_sizes();
    ckpt.init_offsets = trainer.model().quant.offsets();
    ckpt.init_mlp = trainer.model().mlp;
  }

  // Best-so-far snapshot; starts at the initial state so epochs == 0 still
  // yields a complete checkpoint.
  ckpt.embeddings = trainer.model().embeddings;
  ckpt.quant = trainer.model().quant;
  ckpt.mlp = trainer.model().mlp;
  ckpt.gamma = trainer.model().gamma_state.gamma;
  ckpt.best_valid_auc = -1.0;
  ckpt.epochs_run = 0;

  if (cfg.phase == Phase::no_retrain_eval) {
    const auto metrics = trainer.evaluate(data.valid);
    result.log.push_back({cfg.phase, 0, 0.0, metrics.auc, metrics.logloss, sampled->avg_bits});
    ckpt.best_valid_auc = metrics.auc;
    return result;
  }

  for (std::uint32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double train_loss =
        trainer.train_epoch(epoch, cfg.record_step_losses ? &result.step_losses : nullptr);
    const auto metrics = trainer.evaluate(data.valid);
    result.log.push_back(
        {cfg.phase, epoch, train_loss, metrics.auc, metrics.logloss, trainer.avg_expected_bits()});
    if (metrics.auc > ckpt.best_valid_auc) {
      ckpt.best_valid_auc = metrics.auc;
      ckpt.embeddings = trainer.model().embeddings;
      ckpt.quant = trainer.model().quant;
      ckpt.mlp = trainer.model().mlp;
      ckpt.gamma = trainer.model().gamma_state.gamma;
    }
    ckpt.epochs_run = epoch;
  }
  return result;
}

// Evaluation against an arbitrary checkpoint, using the embedding path its
// phase implies. Standalone so the CLI can score any artifact.
inline EvalMetrics evaluate_checkpoint(const Checkpoint& ckpt, const FeatureCatalog& catalog,
                                       const GroupAssignment& groups, const Dataset& data,
                                       const SampleSet& split) {
  TrainConfig cfg;
  cfg.phase = ckpt.phase;
  cfg.tau = ckpt.tau;
  cfg.group_size = ckpt.group_size;
  cfg.candidate_bits = ckpt.candidate_bits;
  cfg.hidden_sizes = ckpt.hidden_sizes;
  cfg.seed = ckpt.seed;
  if (ckpt.catalog_hash != catalog.hash())
    throw std::runtime_error("evaluate: catalog hash mismatch");
  Trainer trainer(cfg, catalog, groups, data);
  trainer.load_model(ckpt.embeddings, ckpt.quant, ckpt.mlp);
  if (ckpt.phase == Phase::search) trainer.model().gamma_state.gamma = ckpt.gamma;
  if (Trainer::embed_mode(ckpt.phase) == EmbedMode::sampled) {
    if (ckpt.sampled_bits.empty())
      throw std::runtime_error("evaluate: checkpoint lacks sampled bit-widths");
    SampledPrecision sp;
    sp.bit_of_group = ckpt.sampled_bits;
    double weighted = 0.0;
    for (std::size_t k = 0; k < groups.num_groups(); ++k)
      weighted += static_cast<double>(sp.bit_of_group[k]) * groups.sizes[k];
    sp.avg_bits = weighted / static_cast<double>(catalog.num_features());
    trainer.set_sampled(sp);
  }
  return trainer.evaluate(split);
}

}  // namespace mpe
