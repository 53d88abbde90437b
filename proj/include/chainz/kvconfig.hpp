#pragma once

// Flat key-value text files used for run configs, sweep plans and
// checkpoints.
//
//   # comment
//   section.sub.key = value
//
// One assignment per line; keys are dotted identifiers, values run to the end
// of the line with surrounding whitespace trimmed. Lists are comma-separated.
// Duplicate keys are errors, and so are keys nothing asked for (see
// reject_unused), which catches misspelled settings.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "chainz/error.hpp"

namespace chainz {

// 17 significant digits: parses back to the identical double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig parse(std::istream& in, const std::string& origin = "<input>") {
    KvConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      const std::string where = origin + ":" + std::to_string(lineno);
      if (eq == std::string::npos) throw ConfigError(t, "missing '=' (" + where + ")");
      const std::string key = trim(t.substr(0, eq));
      const std::string value = trim(t.substr(eq + 1));
      if (!valid_key(key)) throw ConfigError(key, "malformed key (" + where + ")");
      if (cfg.values_.count(key)) throw ConfigError(key, "duplicate key (" + where + ")");
      cfg.values_[key] = value;
      cfg.order_.push_back(key);
    }
    return cfg;
  }

  static KvConfig parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static KvConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("<file>", "cannot open '" + path + "'");
    return parse(in, path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) {
    if (!valid_key(key)) throw ConfigError(key, "malformed key");
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = value;
  }

  std::string get_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(key, "required key is missing");
    used_.insert(key);
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
  }

  double get_double(const std::string& key) const { return to_double(key, get_string(key)); }
  double get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }

  std::uint64_t get_u64(const std::string& key) const { return to_u64(key, get_string(key)); }
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? get_u64(key) : fallback;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get_string(key);
    if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "off" || v == "no" || v == "0") return false;
    throw ConfigError(key, "expected a boolean, got '" + v + "'");
  }

  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    const std::string v = get_string(key);
    std::size_t start = 0;
    for (;;) {
      const auto pos = v.find(',', start);
      const std::string item = trim(v.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
      if (item.empty()) throw ConfigError(key, "empty list element");
      out.push_back(item);
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    return out;
  }

  std::vector<double> get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : get_list(key)) out.push_back(to_double(key, s));
    return out;
  }

  std::vector<std::uint64_t> get_u64_list(const std::string& key) const {
    std::vector<std::uint64_t> out;
    for (const auto& s : get_list(key)) out.push_back(to_u64(key, s));
    return out;
  }

  // Throws on the first key (in file order) that no getter consumed.
  void reject_unused() const {
    for (const auto& k : order_)
      if (!used_.count(k)) throw ConfigError(k, "unknown key");
  }

  // Keys sorted, one "key = value" per line; stable input for hashing.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  std::uint64_t hash() const { return fnv1a64(canonical()); }

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static bool valid_key(const std::string& k) {
    if (k.empty() || k.front() == '.' || k.back() == '.') return false;
    for (std::size_t i = 0; i < k.size(); ++i) {
      const char c = k[i];
      const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                      c == '_' || c == '-' || (c == '.' && k[i - 1] != '.');
      if (!ok) return false;
    }
    return true;
  }

  static double to_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
      throw ConfigError(key, "expected a number, got '" + s + "'");
    return v;
  }

  static std::uint64_t to_u64(const std::string& key, const std::string& s) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw ConfigError(key, "expected a nonnegative integer, got '" + s + "'");
    return v;
  }

  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
  mutable std::set<std::string> used_;
};

}  // namespace chainz
