#pragma once

// Plain-text "key = value" configuration with dotted section keys (polar.hv, train.epochs).
// Lines starting with '#' are comments.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "xview/error.hpp"

namespace xview {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto t = trim(line);
      if (t.empty() || t.front() == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(lineno) + " is not 'key = value': '" + t + "'");
      }
      const auto key = trim(t.substr(0, eq));
      if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has an empty key");
      cfg.values_[key] = trim(t.substr(eq + 1));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  bool contains(const std::string& key) const { return values_.contains(key); }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  const std::string& require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::logic_error&) {
      throw ConfigError("config key '" + key + "' is not a number: '" + it->second + "'");
    }
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      if (!it->second.empty() && it->second.front() == '-') throw std::invalid_argument(key);
      const auto v = std::stoull(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::logic_error&) {
      throw ConfigError("config key '" + key + "' is not a non-negative integer: '" + it->second + "'");
    }
  }

  std::vector<double> get_doubles(const std::string& key) const {
    std::istringstream in(require(key));
    std::vector<double> out;
    for (std::string tok; in >> tok;) {
      try {
        out.push_back(std::stod(tok));
      } catch (const std::logic_error&) {
        throw ConfigError("config key '" + key + "' holds a non-numeric entry '" + tok + "'");
      }
    }
    return out;
  }

  /// Serialized with keys in sorted order.
  std::string dump() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
    return os.str();
  }

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace xview
