#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// Human-readable "key = value" config files. Unknown and duplicate keys are
// rejected; every run re-serializes its resolved config next to its outputs.

namespace mpe {

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::istream& is) {
    KeyValueConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const std::size_t eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config: line " + std::to_string(line_no) + ": expected key = value");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw std::runtime_error("config: line " + std::to_string(line_no) + ": empty key");
      if (cfg.values_.count(key))
        throw std::runtime_error("config: line " + std::to_string(line_no) + ": duplicate key \"" + key + "\"");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static KeyValueConfig parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    return parse(is);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& def) const {
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
  }

  std::string require_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::runtime_error("config: missing required key \"" + key + "\"");
    return it->second;
  }

  double get_double(const std::string& key, double def) const {
    auto it = values_.find(key);
    return it == values_.end() ? def : to_double(key, it->second);
  }

  std::int64_t get_int(const std::string& key, std::int64_t def) const {
    auto it = values_.find(key);
    return it == values_.end() ? def : to_int(key, it->second);
  }

  std::vector<int> get_int_list(const std::string& key, std::vector<int> def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    std::vector<int> out;
    for (const auto& piece : split_list(it->second))
      out.push_back(static_cast<int>(to_int(key, piece)));
    return out;
  }

  std::vector<double> get_double_list(const std::string& key, std::vector<double> def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    std::vector<double> out;
    for (const auto& piece : split_list(it->second)) out.push_back(to_double(key, piece));
    return out;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  void reject_unknown_keys(const std::set<std::string>& allowed) const {
    std::string unknown;
    for (const auto& [key, value] : values_) {
      if (!allowed.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
    }
    if (!unknown.empty()) throw std::runtime_error("config: unknown keys: " + unknown);
  }

  void serialize(std::ostream& os) const {
    for (const auto& [key, value] : values_) os << key << " = " << value << '\n';
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
  }

  static double to_double(const std::string& key, const std::string& value) {
    try {
      std::size_t pos = 0;
      const double d = std::stod(value, &pos);
      if (pos != value.size()) throw std::invalid_argument(value);
      return d;
    } catch (const std::exception&) {
      throw std::runtime_error("config: key \"" + key + "\": not a number: \"" + value + "\"");
    }
  }

  static std::int64_t to_int(const std::string& key, const std::string& value) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(value, &pos);
      if (pos != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error("config: key \"" + key + "\": not an integer: \"" + value + "\"");
    }
  }

  static std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::string piece;
    std::istringstream is(value);
    while (std::getline(is, piece, ',')) {
      piece = trim(piece);
      if (!piece.empty()) out.push_back(piece);
    }
    return out;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace mpe
