#pragma once

// Flat `key = value` experiment files. `#` starts a comment; keys are
// dotted names (topology.kind, run.alpha, ...). Unknown keys are errors.

#include "gtsvrg/errors.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace gtsvrg {

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys{
      "topology.kind",    "topology.n",         "topology.rows",   "topology.cols",
      "topology.prob",    "topology.max_retries", "topology.weights", "topology.matrix",
      "problem.family",   "problem.m",          "problem.p",       "problem.mu",
      "problem.ell",      "problem.lambda",     "problem.seed",    "problem.file",
      "run.method",       "run.alpha",          "run.K",           "run.T",
      "run.seed",         "run.record_every",   "run.threads",     "run.target",
      "run.x0",           "output.dir",         "compare.methods", "compare.target",
      "verify.fixture",   "verify.mc_trials",   "verify.states",   "verify.samples",
      "theory.epsilon",   "theory.c",
  };
  return keys;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

class Config {
 public:
  static Config parse(std::istream& in, const std::string& origin = "<config>") {
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string_view body = line;
      if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
      body = detail::trim(body);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      const std::string where = origin + ":" + std::to_string(lineno);
      if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
      const std::string key(detail::trim(body.substr(0, eq)));
      const std::string value(detail::trim(body.substr(eq + 1)));
      if (key.empty()) throw ConfigError(where + ": empty key");
      if (!known_config_keys().count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
      if (cfg.values_.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static Config parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    return parse(in, path);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  void set(const std::string& key, std::string value) {
    if (!known_config_keys().count(key)) throw ConfigError("unknown key '" + key + "'");
    values_[key] = std::move(value);
  }

  std::optional<std::string> get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
  }

  std::string require(const std::string& key) const {
    auto v = get(key);
    if (!v) throw ConfigError("missing required key '" + key + "'");
    return *v;
  }

  double get_double(const std::string& key, double fallback) const {
    const auto v = get(key);
    return v ? to_double(key, *v) : fallback;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    const auto v = get(key);
    return v ? to_int(key, *v) : fallback;
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || p != v->data() + v->size()) {
      throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + *v + "'");
    }
    return out;
  }

  /// Comma-separated list; an empty value gives an empty list.
  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    const auto v = get(key);
    if (!v) return out;
    std::string_view rest = *v;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const auto item = detail::trim(rest.substr(0, comma));
      if (!item.empty()) out.emplace_back(item);
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    return out;
  }

  static double to_double(const std::string& key, const std::string& text) {
    try {
      std::size_t used = 0;
      const double out = std::stod(text, &used);
      if (used == text.size()) return out;
    } catch (const std::exception&) {
    }
    throw ConfigError("key '" + key + "': expected a number, got '" + text + "'");
  }

  static std::int64_t to_int(const std::string& key, const std::string& text) {
    std::int64_t out = 0;
    const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    if (ec != std::errc() || p != text.data() + text.size()) {
      throw ConfigError("key '" + key + "': expected an integer, got '" + text + "'");
    }
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace gtsvrg
