#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// Little-endian binary readers/writers shared by every on-disk format
// (catalog, splits, checkpoints, packed tables), plus the FNV-1a hash
// used as the catalog digest.

namespace mpe::io {

inline void write_bytes(std::ostream& os, const void* data, std::size_t len) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  if (!os) throw std::runtime_error("io: write failed");
}

inline void read_bytes(std::istream& is, void* data, std::size_t len) {
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
  if (is.gcount() != static_cast<std::streamsize>(len))
    throw std::runtime_error("io: unexpected end of file");
}

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  using U = std::make_unsigned_t<T>;
  U u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(u >> (8 * i));
  write_bytes(os, buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  read_bytes(is, buf, sizeof(T));
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(buf[i]) << (8 * i);
  return static_cast<T>(u);
}

inline void write_f64(std::ostream& os, double value) {
  std::uint64_t bits;
  std::memcpy(&bits, &value, sizeof(bits));
  write_le<std::uint64_t>(os, bits);
}

inline double read_f64(std::istream& is) {
  std::uint64_t bits = read_le<std::uint64_t>(is);
  double value;
  std::memcpy(&value, &bits, sizeof(value));
  return value;
}

inline void write_string(std::ostream& os, std::string_view s) {
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is) {
  std::uint32_t len = read_le<std::uint32_t>(is);
  std::string s(len, '\0');
  if (len > 0) read_bytes(is, s.data(), len);
  return s;
}

inline void write_f64_vec(std::ostream& os, std::span<const double> v) {
  write_le<std::uint64_t>(os, v.size());
  for (double x : v) write_f64(os, x);
}

inline std::vector<double> read_f64_vec(std::istream& is) {
  std::uint64_t len = read_le<std::uint64_t>(is);
  std::vector<double> v(len);
  for (auto& x : v) x = read_f64(is);
  return v;
}

inline void write_i32_vec(std::ostream& os, std::span<const std::int32_t> v) {
  write_le<std::uint64_t>(os, v.size());
  for (auto x : v) write_le<std::int32_t>(os, x);
}

inline std::vector<std::int32_t> read_i32_vec(std::istream& is) {
  std::uint64_t len = read_le<std::uint64_t>(is);
  std::vector<std::int32_t> v(len);
  for (auto& x : v) x = read_le<std::int32_t>(is);
  return v;
}

inline void write_magic(std::ostream& os, std::string_view magic) {
  write_bytes(os, magic.data(), magic.size());
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  read_bytes(is, got.data(), got.size());
  if (got != magic) throw std::runtime_error("io: bad file magic, expected \"" + std::string(magic) + "\"");
}

// FNV-1a, 64-bit.
class Fnv1a {
 public:
  void update(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  template <typename T>
  void update_value(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    update(&v, sizeof(v));
  }
  std::uint64_t digest() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view bytes) {
  Fnv1a h;
  h.update(bytes);
  return h.digest();
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("io: cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("io: cannot open for reading: " + path);
  return is;
}

}  // namespace mpe::io
