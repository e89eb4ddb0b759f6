#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "grdo/common.hpp"

namespace grdo {

// Flat key = value config file. '#' starts a comment; unknown keys are
// reported by the consumer so typos fail loudly.
class KeyValueConfig {
 public:
  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("config: cannot open " + path);
    KeyValueConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const size_t eq = line.find('=');
      if (eq == std::string::npos) {
        if (line.find_first_not_of(" \t\r") != std::string::npos) {
          throw ParseError("config: line " + std::to_string(lineno) + " is not key = value");
        }
        continue;
      }
      cfg.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback) {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    seen_.insert(key);
    return it->second;
  }

  double get_double(const std::string& key, double fallback) {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    seen_.insert(key);
    try {
      return std::stod(it->second);
    } catch (...) {
      throw ParseError("config: key '" + key + "' is not a number: " + it->second);
    }
  }

  long get_long(const std::string& key, long fallback) {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    seen_.insert(key);
    try {
      return std::stol(it->second);
    } catch (...) {
      throw ParseError("config: key '" + key + "' is not an integer: " + it->second);
    }
  }

  // After the consumer pulled everything it understands, reject leftovers.
  void reject_unknown() const {
    for (const auto& [key, value] : values_) {
      if (!seen_.count(key)) throw ParseError("config: unknown key '" + key + "'");
    }
  }

 private:
  static std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> seen_;
};

}  // namespace grdo
