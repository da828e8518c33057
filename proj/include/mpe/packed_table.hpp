#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpe/catalog.hpp"
#include "mpe/io.hpp"
#include "mpe/precision.hpp"
#include "mpe/quantizer.hpp"

// The inference store: embeddings quantized at their group's sampled
// bit-width, codes concatenated at the bit level (two's complement,
// LSB-first) and packed into 16-bit words. Each feature starts at a word
// boundary, so a lookup is pure arithmetic off the per-group directory:
// features occupy id order inside their group and groups are id-contiguous
// (the catalog assigns ids in descending frequency order).

namespace mpe {

inline constexpr std::string_view kPackedMagic = "MPEPACK1";
inline constexpr std::uint32_t kPackedVersion = 1;

inline std::uint64_t words_per_feature(int bits, std::size_t dim) {
  return (static_cast<std::uint64_t>(dim) * static_cast<std::uint64_t>(bits) + 15) / 16;
}

struct GroupDirEntry {
  std::uint8_t bits = 0;
  std::uint64_t word_offset = 0;
};

// On-disk size of one directory entry (u8 bits + u64 offset).
inline constexpr std::uint64_t kDirEntryBytes = 9;

struct CompressionReport {
  std::uint64_t packed_bytes = 0;  // payload + directory
  std::uint64_t fp32_bytes = 0;    // n * d * 4
  double ratio = 0.0;
  double avg_bits = 0.0;
  std::map<int, std::uint64_t> per_bit_feature_counts;
};

class PackedTable {
 public:
  std::uint64_t catalog_hash = 0;
  std::uint64_t n = 0;
  std::uint32_t d = 0;
  std::uint32_t group_size = 0;
  std::vector<int> candidate_bits;
  QuantizerParams quant;
  std::vector<GroupDirEntry> directory;
  std::vector<std::uint16_t> payload;

  static PackedTable pack(std::span<const double> embeddings, const SampledPrecision& sampled,
                          const QuantizerParams& params, const GroupAssignment& groups,
                          std::uint64_t catalog_hash, std::vector<int> candidate_bits = {}) {
    const std::size_t d = params.dim();
    if (d == 0) throw std::invalid_argument("pack: zero embedding dimension");
    if (embeddings.size() % d != 0) throw std::invalid_argument("pack: embedding shape mismatch");
    const std::size_t n = embeddings.size() / d;
    if (groups.group_of.size() != n) throw std::invalid_argument("pack: group assignment mismatch");
    if (sampled.bit_of_group.size() != groups.num_groups())
      throw std::invalid_argument("pack: sampled precision group count mismatch");
    for (std::size_t id = 0; id < n; ++id)
      if (groups.group_of[id] != id / groups.group_size)
        throw std::invalid_argument(
            "pack: groups are not id-contiguous (feature ids must be frequency-ranked)");

    PackedTable t;
    t.catalog_hash = catalog_hash;
    t.n = n;
    t.d = static_cast<std::uint32_t>(d);
    t.group_size = groups.group_size;
    t.candidate_bits = std::move(candidate_bits);
    t.quant = params;

    const std::size_t g = groups.num_groups();
    t.directory.resize(g);
    std::uint64_t offset = 0;
    for (std::size_t k = 0; k < g; ++k) {
      const int b = sampled.bit_of_group[k];
      if (b < 0 || b > kMaxBits) throw std::invalid_argument("pack: sampled bit-width out of range");
      t.directory[k].bits = static_cast<std::uint8_t>(b);
      t.directory[k].word_offset = offset;
      offset += static_cast<std::uint64_t>(groups.sizes[k]) * words_per_feature(b, d);
    }
    t.payload.assign(offset, 0);

    std::vector<std::int32_t> codes(d);
    std::vector<double> values(d);
    for (std::size_t id = 0; id < n; ++id) {
      const std::size_t k = groups.group_of[id];
      const int b = t.directory[k].bits;
      if (b == 0) continue;
      quantize_vector(embeddings.subspan(id * d, d), params, b, values, codes);
      const std::uint64_t wpf = words_per_feature(b, d);
      const std::uint64_t base =
          t.directory[k].word_offset + (id - static_cast<std::uint64_t>(k) * t.group_size) * wpf;
      std::uint64_t bitpos = base * 16;
      const std::uint32_t mask = (std::uint32_t{1} << b) - 1;
      for (std::size_t j = 0; j < d; ++j) {
        const std::uint32_t raw = static_cast<std::uint32_t>(codes[j]) & mask;
        const std::uint64_t word = bitpos >> 4;
        const std::uint32_t shift = static_cast<std::uint32_t>(bitpos & 15);
        t.payload[word] |= static_cast<std::uint16_t>((raw << shift) & 0xFFFFu);
        if (shift + b > 16) t.payload[word + 1] |= static_cast<std::uint16_t>(raw >> (16 - shift));
        bitpos += static_cast<std::uint64_t>(b);
      }
    }
    return t;
  }

  std::size_t num_groups() const { return directory.size(); }

  int bits_of(std::uint64_t feature_id) const {
    return directory[group_of(feature_id)].bits;
  }

  // Integer codes of one feature, sign-extended from the packed b-bit
  // fields. Pure read.
  void unpack_codes(std::uint64_t feature_id, std::span<std::int32_t> out) const {
    check_id(feature_id);
    if (out.size() != d) throw std::invalid_argument("unpack: bad output size");
    const std::size_t k = group_of(feature_id);
    const int b = directory[k].bits;
    if (b == 0) {
      std::fill(out.begin(), out.end(), 0);
      return;
    }
    const std::uint64_t wpf = words_per_feature(b, d);
    const std::uint64_t base =
        directory[k].word_offset + (feature_id - static_cast<std::uint64_t>(k) * group_size) * wpf;
    std::uint64_t bitpos = base * 16;
    const std::uint32_t mask = (std::uint32_t{1} << b) - 1;
    const std::uint32_t sign_bit = std::uint32_t{1} << (b - 1);
    for (std::size_t j = 0; j < d; ++j) {
      const std::uint64_t word = bitpos >> 4;
      const std::uint32_t shift = static_cast<std::uint32_t>(bitpos & 15);
      std::uint32_t raw = static_cast<std::uint32_t>(payload[word]) >> shift;
      if (shift + b > 16) raw |= static_cast<std::uint32_t>(payload[word + 1]) << (16 - shift);
      raw &= mask;
      out[j] = (raw & sign_bit) ? static_cast<std::int32_t>(raw | ~mask)
                                : static_cast<std::int32_t>(raw);
      bitpos += static_cast<std::uint64_t>(b);
    }
  }

  // Dequantized embedding row; bit-exact against quantize_vector on the
  // source table. Pure read: safe for concurrent lookups.
  void lookup(std::uint64_t feature_id, std::span<double> out) const {
    check_id(feature_id);
    if (out.size() != d) throw std::invalid_argument("lookup: bad output size");
    const std::size_t k = group_of(feature_id);
    const int b = directory[k].bits;
    if (b == 0) {
      std::fill(out.begin(), out.end(), 0.0);
      return;
    }
    const double alpha = quant.step_for(b);
    const auto& beta = quant.offsets();
    const std::uint64_t wpf = words_per_feature(b, d);
    const std::uint64_t base =
        directory[k].word_offset + (feature_id - static_cast<std::uint64_t>(k) * group_size) * wpf;
    std::uint64_t bitpos = base * 16;
    const std::uint32_t mask = (std::uint32_t{1} << b) - 1;
    const std::uint32_t sign_bit = std::uint32_t{1} << (b - 1);
    for (std::size_t j = 0; j < d; ++j) {
      const std::uint64_t word = bitpos >> 4;
      const std::uint32_t shift = static_cast<std::uint32_t>(bitpos & 15);
      std::uint32_t raw = static_cast<std::uint32_t>(payload[word]) >> shift;
      if (shift + b > 16) raw |= static_cast<std::uint32_t>(payload[word + 1]) << (16 - shift);
      raw &= mask;
      const std::int32_t code = (raw & sign_bit) ? static_cast<std::int32_t>(raw | ~mask)
                                                 : static_cast<std::int32_t>(raw);
      out[j] = dequantize_code(code, alpha, beta[j]);
      bitpos += static_cast<std::uint64_t>(b);
    }
  }

  std::vector<double> lookup(std::uint64_t feature_id) const {
    std::vector<double> out(d);
    lookup(feature_id, out);
    return out;
  }

  CompressionReport report() const {
    CompressionReport r;
    r.fp32_bytes = n * d * 4;
    r.packed_bytes = payload.size() * 2 + directory.size() * kDirEntryBytes;
    r.ratio = static_cast<double>(r.packed_bytes) / static_cast<double>(r.fp32_bytes);
    double weighted = 0.0;
    for (std::size_t k = 0; k < directory.size(); ++k) {
      const std::uint64_t size = group_features(k);
      r.per_bit_feature_counts[directory[k].bits] += size;
      weighted += static_cast<double>(directory[k].bits) * static_cast<double>(size);
    }
    r.avg_bits = weighted / static_cast<double>(n);
    return r;
  }

  void save(std::ostream& os) const {
    io::write_magic(os, kPackedMagic);
    io::write_le<std::uint32_t>(os, kPackedVersion);
    io::write_le<std::uint64_t>(os, catalog_hash);
    io::write_le<std::uint64_t>(os, n);
    io::write_le<std::uint32_t>(os, d);
    io::write_le<std::uint32_t>(os, group_size);
    io::write_i32_vec(os, candidate_bits);
    io::write_i32_vec(os, quant.bit_values());
    io::write_f64_vec(os, quant.step_sizes());
    io::write_f64_vec(os, quant.offsets());
    io::write_le<std::uint64_t>(os, directory.size());
    for (const auto& e : directory) {
      io::write_le<std::uint8_t>(os, e.bits);
      io::write_le<std::uint64_t>(os, e.word_offset);
    }
    io::write_le<std::uint64_t>(os, payload.size());
    for (auto w : payload) io::write_le<std::uint16_t>(os, w);
  }

  void save(const std::string& path) const {
    auto os = io::open_out(path);
    save(os);
  }

  static PackedTable load(std::istream& is) {
    io::expect_magic(is, kPackedMagic);
    const auto version = io::read_le<std::uint32_t>(is);
    if (version != kPackedVersion)
      throw std::runtime_error("packed table: unsupported version " + std::to_string(version));
    PackedTable t;
    t.catalog_hash = io::read_le<std::uint64_t>(is);
    t.n = io::read_le<std::uint64_t>(is);
    t.d = io::read_le<std::uint32_t>(is);
    t.group_size = io::read_le<std::uint32_t>(is);
    t.candidate_bits = io::read_i32_vec(is);
    auto bits = io::read_i32_vec(is);
    auto steps = io::read_f64_vec(is);
    auto offsets = io::read_f64_vec(is);
    t.quant = QuantizerParams::from_values(std::move(bits), std::move(steps), std::move(offsets));
    const auto g = io::read_le<std::uint64_t>(is);
    t.directory.resize(g);
    for (auto& e : t.directory) {
      e.bits = io::read_le<std::uint8_t>(is);
      e.word_offset = io::read_le<std::uint64_t>(is);
    }
    const auto words = io::read_le<std::uint64_t>(is);
    t.payload.resize(words);
    for (auto& w : t.payload) w = io::read_le<std::uint16_t>(is);
    return t;
  }

  static PackedTable load(const std::string& path) {
    auto is = io::open_in(path);
    return load(is);
  }

  // Per-group text dump: bit-width, word offset, and the codes of the
  // group's first feature.
  void dump(std::ostream& os, std::size_t max_groups) const {
    os << "n=" << n << " d=" << d << " group_size=" << group_size
       << " groups=" << directory.size() << " payload_words=" << payload.size() << "\n";
    std::vector<std::int32_t> codes(d);
    const std::size_t limit = std::min<std::size_t>(max_groups, directory.size());
    for (std::size_t k = 0; k < limit; ++k) {
      const std::uint64_t first = static_cast<std::uint64_t>(k) * group_size;
      os << k << '\t' << static_cast<int>(directory[k].bits) << '\t' << directory[k].word_offset
         << '\t';
      if (directory[k].bits == 0) {
        os << "-";
      } else {
        unpack_codes(first, codes);
        for (std::size_t j = 0; j < d; ++j) os << (j ? "," : "") << codes[j];
      }
      os << '\n';
    }
  }

 private:
  std::size_t group_of(std::uint64_t feature_id) const { return feature_id / group_size; }

  std::uint64_t group_features(std::size_t k) const {
    const std::uint64_t begin = static_cast<std::uint64_t>(k) * group_size;
    return std::min<std::uint64_t>(group_size, n - begin);
  }

  void check_id(std::uint64_t feature_id) const {
    if (feature_id >= n)
      throw std::out_of_range("packed table: feature id " + std::to_string(feature_id) +
                              " out of range [0, " + std::to_string(n) + ")");
  }
};

}  // namespace mpe
