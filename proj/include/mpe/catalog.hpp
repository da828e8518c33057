#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mpe/io.hpp"

// Click-log ingestion: vocabulary construction with singleton-to-OOV
// folding, a deterministic 8:1:1 split, train-split frequency counting,
// and frequency-aware grouping. Feature ids are assigned in descending
// train-frequency order (ties: field index, then token), which makes
// group membership arithmetic and keeps the packed store directory flat.

namespace mpe {

inline constexpr std::string_view kOovToken = "OOV";

struct FeatureCatalog {
  std::vector<std::string> field_names;
  // Parallel arrays indexed by feature id.
  std::vector<std::uint32_t> field_of;
  std::vector<std::string> token_of;
  std::vector<std::uint64_t> frequencies;  // train-split counts
  std::vector<std::uint32_t> oov_of_field;
  std::uint32_t embedding_dim = 16;

  std::size_t num_features() const { return token_of.size(); }
  std::size_t num_fields() const { return field_names.size(); }

  void build_index() {
    index_.assign(num_fields(), {});
    for (std::uint32_t id = 0; id < num_features(); ++id)
      index_[field_of[id]].emplace(token_of[id], id);
  }

  // Unknown tokens fall back to the field's OOV id.
  std::uint32_t id_of(std::uint32_t field, const std::string& token) const {
    if (index_.size() != num_fields()) throw std::logic_error("catalog: index not built");
    const auto& m = index_[field];
    auto it = m.find(token);
    return it == m.end() ? oov_of_field[field] : it->second;
  }

  void serialize_body(std::ostream& os) const {
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(field_names.size()));
    for (const auto& name : field_names) io::write_string(os, name);
    io::write_le<std::uint32_t>(os, embedding_dim);
    io::write_le<std::uint64_t>(os, num_features());
    for (std::uint32_t id = 0; id < num_features(); ++id) {
      io::write_le<std::uint32_t>(os, field_of[id]);
      io::write_string(os, token_of[id]);
      io::write_le<std::uint64_t>(os, frequencies[id]);
    }
    for (auto oov : oov_of_field) io::write_le<std::uint32_t>(os, oov);
  }

  std::uint64_t hash() const {
    std::ostringstream body;
    serialize_body(body);
    return io::fnv1a(body.str());
  }

 private:
  std::vector<std::unordered_map<std::string, std::uint32_t>> index_;
};

// One split of encoded samples; ids are stored flat with num_fields stride.
struct SampleSet {
  std::uint32_t num_fields = 0;
  std::vector<std::uint32_t> ids;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const std::uint32_t> row(std::size_t i) const {
    return {ids.data() + i * num_fields, num_fields};
  }
};

struct Dataset {
  SampleSet train, valid, test;
};

namespace detail {

inline std::vector<std::string> split_tsv(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      cols.push_back(line.substr(start));
      break;
    }
    cols.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return cols;
}

}  // namespace detail

struct IngestResult {
  FeatureCatalog catalog;
  Dataset data;
};

// Reads "label \t token_1 \t ... \t token_F" rows, folds singletons into
// per-field OOV features, splits 8:1:1 by shuffled index ranges, and
// counts frequencies on the training split.
inline IngestResult ingest(std::istream& rows, const std::vector<std::string>& field_names,
                           std::uint64_t seed, std::uint32_t embedding_dim = 16) {
  const std::size_t F = field_names.size();
  if (F == 0) throw std::invalid_argument("ingest: schema has no fields");

  std::vector<std::uint8_t> labels;
  std::vector<std::string> tokens;  // flat, stride F
  std::vector<std::unordered_map<std::string, std::uint64_t>> raw_counts(F);

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(rows, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = detail::split_tsv(line);
    if (cols.size() != F + 1)
      throw std::runtime_error("ingest: line " + std::to_string(line_no) + ": expected " +
                               std::to_string(F + 1) + " columns, got " + std::to_string(cols.size()));
    if (cols[0] != "0" && cols[0] != "1")
      throw std::runtime_error("ingest: line " + std::to_string(line_no) + ": label must be 0 or 1");
    labels.push_back(cols[0] == "1" ? 1 : 0);
    for (std::size_t f = 0; f < F; ++f) {
      ++raw_counts[f][cols[f + 1]];
      tokens.push_back(std::move(cols[f + 1]));
    }
  }
  const std::size_t N = labels.size();
  if (N == 0) throw std::runtime_error("ingest: empty input");

  // Vocabulary with singletons folded into the per-field OOV token.
  // Provisional ids first; final ids come after train-frequency counting.
  std::vector<std::unordered_map<std::string, std::uint32_t>> provisional(F);
  std::vector<std::uint32_t> prov_field;
  std::vector<std::string> prov_token;
  auto add_feature = [&](std::size_t f, const std::string& tok) {
    const auto id = static_cast<std::uint32_t>(prov_token.size());
    provisional[f].emplace(tok, id);
    prov_field.push_back(static_cast<std::uint32_t>(f));
    prov_token.push_back(tok);
    return id;
  };
  std::vector<std::uint32_t> prov_oov(F);
  for (std::size_t f = 0; f < F; ++f) {
    prov_oov[f] = add_feature(f, std::string(kOovToken));
    std::vector<std::string> kept;
    for (const auto& [tok, cnt] : raw_counts[f])
      if (cnt >= 2 && tok != kOovToken) kept.push_back(tok);
    std::sort(kept.begin(), kept.end());
    for (auto& tok : kept) add_feature(f, tok);
  }
  const std::size_t n = prov_token.size();

  // Deterministic 8:1:1 split by shuffled index ranges.
  std::vector<std::uint32_t> order(N);
  std::iota(order.begin(), order.end(), 0u);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = N * 8 / 10;
  const std::size_t n_valid = N * 9 / 10 - n_train;

  auto prov_id = [&](std::size_t row, std::size_t f) {
    const auto& m = provisional[f];
    auto it = m.find(tokens[row * F + f]);
    return it == m.end() ? prov_oov[f] : it->second;
  };

  // Frequencies on the training split only.
  std::vector<std::uint64_t> prov_freq(n, 0);
  for (std::size_t i = 0; i < n_train; ++i) {
    const std::size_t row = order[i];
    for (std::size_t f = 0; f < F; ++f) ++prov_freq[prov_id(row, f)];
  }

  // Final ids: descending train frequency, ties by (field, token).
  std::vector<std::uint32_t> by_rank(n);
  std::iota(by_rank.begin(), by_rank.end(), 0u);
  std::sort(by_rank.begin(), by_rank.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (prov_freq[a] != prov_freq[b]) return prov_freq[a] > prov_freq[b];
    if (prov_field[a] != prov_field[b]) return prov_field[a] < prov_field[b];
    return prov_token[a] < prov_token[b];
  });
  std::vector<std::uint32_t> rank_of(n);
  for (std::uint32_t r = 0; r < n; ++r) rank_of[by_rank[r]] = r;

  IngestResult result;
  auto& cat = result.catalog;
  cat.field_names = field_names;
  cat.embedding_dim = embedding_dim;
  cat.field_of.resize(n);
  cat.token_of.resize(n);
  cat.frequencies.resize(n);
  cat.oov_of_field.resize(F);
  for (std::uint32_t prov = 0; prov < n; ++prov) {
    const std::uint32_t id = rank_of[prov];
    cat.field_of[id] = prov_field[prov];
    cat.token_of[id] = prov_token[prov];
    cat.frequencies[id] = prov_freq[prov];
  }
  for (std::size_t f = 0; f < F; ++f) cat.oov_of_field[f] = rank_of[prov_oov[f]];
  cat.build_index();

  auto encode = [&](std::size_t begin, std::size_t end, SampleSet& out) {
    out.num_fields = static_cast<std::uint32_t>(F);
    out.ids.reserve((end - begin) * F);
    out.labels.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t row = order[i];
      out.labels.push_back(labels[row]);
      for (std::size_t f = 0; f < F; ++f) out.ids.push_back(rank_of[prov_id(row, f)]);
    }
  };
  encode(0, n_train, result.data.train);
  encode(n_train, n_train + n_valid, result.data.valid);
  encode(n_train + n_valid, N, result.data.test);
  return result;
}

// Contiguous descending-frequency grouping. Group k holds the k-th chunk of
// group_size features; the last group may be smaller. Frequency sums are
// floored at 1 so the 1/s regularizer weight stays finite.
struct GroupAssignment {
  std::vector<std::uint32_t> group_of;
  std::vector<double> freq_sums;
  std::vector<std::uint32_t> sizes;
  std::uint32_t group_size = 0;

  std::size_t num_groups() const { return freq_sums.size(); }
};

inline GroupAssignment group_by_frequency(const FeatureCatalog& catalog, std::uint32_t group_size) {
  if (group_size == 0) throw std::invalid_argument("group_by_frequency: group_size must be >= 1");
  const std::size_t n = catalog.num_features();
  if (n == 0) throw std::invalid_argument("group_by_frequency: empty catalog");

  std::vector<std::uint32_t> by_rank(n);
  std::iota(by_rank.begin(), by_rank.end(), 0u);
  std::sort(by_rank.begin(), by_rank.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (catalog.frequencies[a] != catalog.frequencies[b])
      return catalog.frequencies[a] > catalog.frequencies[b];
    return a < b;
  });

  GroupAssignment ga;
  ga.group_size = group_size;
  const std::size_t g = (n + group_size - 1) / group_size;
  ga.group_of.resize(n);
  ga.freq_sums.assign(g, 0.0);
  ga.sizes.assign(g, 0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto k = static_cast<std::uint32_t>(r / group_size);
    ga.group_of[by_rank[r]] = k;
    ga.freq_sums[k] += static_cast<double>(catalog.frequencies[by_rank[r]]);
    ++ga.sizes[k];
  }
  for (auto& s : ga.freq_sums) s = std::max(s, 1.0);
  return ga;
}

// A grouping that is contiguous in id order; valid whenever ids are
// frequency-ranked (as ingest guarantees). Used where only the layout, not
// the frequency sums, matters (packing from a checkpoint).
inline GroupAssignment contiguous_groups(std::size_t n, std::uint32_t group_size) {
  if (group_size == 0) throw std::invalid_argument("contiguous_groups: group_size must be >= 1");
  if (n == 0) throw std::invalid_argument("contiguous_groups: no features");
  GroupAssignment ga;
  ga.group_size = group_size;
  const std::size_t g = (n + group_size - 1) / group_size;
  ga.group_of.resize(n);
  ga.freq_sums.assign(g, 1.0);
  ga.sizes.assign(g, 0);
  for (std::size_t id = 0; id < n; ++id) {
    const auto k = static_cast<std::uint32_t>(id / group_size);
    ga.group_of[id] = k;
    ++ga.sizes[k];
  }
  return ga;
}

// ---- Catalog snapshot file ("MPECAT1") ----

inline constexpr std::string_view kCatalogMagic = "MPECAT1";
inline constexpr std::uint32_t kCatalogVersion = 1;

inline void save_catalog(std::ostream& os, const FeatureCatalog& catalog) {
  io::write_magic(os, kCatalogMagic);
  io::write_le<std::uint32_t>(os, kCatalogVersion);
  catalog.serialize_body(os);
}

inline void save_catalog(const std::string& path, const FeatureCatalog& catalog) {
  auto os = io::open_out(path);
  save_catalog(os, catalog);
}

inline FeatureCatalog load_catalog(std::istream& is) {
  io::expect_magic(is, kCatalogMagic);
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kCatalogVersion)
    throw std::runtime_error("catalog: unsupported version " + std::to_string(version));
  FeatureCatalog cat;
  const auto num_fields = io::read_le<std::uint32_t>(is);
  cat.field_names.resize(num_fields);
  for (auto& name : cat.field_names) name = io::read_string(is);
  cat.embedding_dim = io::read_le<std::uint32_t>(is);
  const auto n = io::read_le<std::uint64_t>(is);
  cat.field_of.resize(n);
  cat.token_of.resize(n);
  cat.frequencies.resize(n);
  for (std::uint64_t id = 0; id < n; ++id) {
    cat.field_of[id] = io::read_le<std::uint32_t>(is);
    cat.token_of[id] = io::read_string(is);
    cat.frequencies[id] = io::read_le<std::uint64_t>(is);
  }
  cat.oov_of_field.resize(num_fields);
  for (auto& oov : cat.oov_of_field) oov = io::read_le<std::uint32_t>(is);
  cat.build_index();
  return cat;
}

inline FeatureCatalog load_catalog(const std::string& path) {
  auto is = io::open_in(path);
  return load_catalog(is);
}

// ---- Encoded split file ("MPEDS1") ----

inline constexpr std::string_view kDatasetMagic = "MPEDS1";
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(std::ostream& os, const Dataset& data, std::uint64_t catalog_hash) {
  io::write_magic(os, kDatasetMagic);
  io::write_le<std::uint32_t>(os, kDatasetVersion);
  io::write_le<std::uint64_t>(os, catalog_hash);
  for (const SampleSet* split : {&data.train, &data.valid, &data.test}) {
    io::write_le<std::uint32_t>(os, split->num_fields);
    io::write_le<std::uint64_t>(os, split->size());
    for (std::size_t i = 0; i < split->size(); ++i) {
      io::write_le<std::uint8_t>(os, split->labels[i]);
      for (auto id : split->row(i)) io::write_le<std::uint32_t>(os, id);
    }
  }
}

inline void save_dataset(const std::string& path, const Dataset& data, std::uint64_t catalog_hash) {
  auto os = io::open_out(path);
  save_dataset(os, data, catalog_hash);
}

inline Dataset load_dataset(std::istream& is, std::uint64_t expected_catalog_hash) {
  io::expect_magic(is, kDatasetMagic);
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kDatasetVersion)
    throw std::runtime_error("dataset: unsupported version " + std::to_string(version));
  const auto hash = io::read_le<std::uint64_t>(is);
  if (hash != expected_catalog_hash)
    throw std::runtime_error("dataset: catalog hash mismatch");
  Dataset data;
  for (SampleSet* split : {&data.train, &data.valid, &data.test}) {
    split->num_fields = io::read_le<std::uint32_t>(is);
    const auto count = io::read_le<std::uint64_t>(is);
    split->labels.resize(count);
    split->ids.resize(count * split->num_fields);
    for (std::uint64_t i = 0; i < count; ++i) {
      split->labels[i] = io::read_le<std::uint8_t>(is);
      for (std::uint32_t f = 0; f < split->num_fields; ++f)
        split->ids[i * split->num_fields + f] = io::read_le<std::uint32_t>(is);
    }
  }
  return data;
}

inline Dataset load_dataset(const std::string& path, std::uint64_t expected_catalog_hash) {
  auto is = io::open_in(path);
  return load_dataset(is, expected_catalog_hash);
}

}  // namespace mpe
