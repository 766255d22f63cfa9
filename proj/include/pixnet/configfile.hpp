#pragma once

// Plain `key = value` text with # comments. One dialect serves the CLI
// config file, the checkpoint config block and slide sidecar metadata.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pixnet/common.hpp"

namespace pixnet {

class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& origin = "config") {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw DataError(origin + ":" + std::to_string(line_no) + ": expected key = value");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty()) throw DataError(origin + ":" + std::to_string(line_no) + ": empty key");
      kv.set(key, value);
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path);
  }

  bool has(const std::string& key) const {
    for (const auto& [k, v] : items_)
      if (k == key) return true;
    return false;
  }

  std::string get(const std::string& key) const {
    for (const auto& [k, v] : items_)
      if (k == key) return v;
    throw DataError("config: missing key '" + key + "'");
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
  }

  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return parse_double(key, get(key));
  }

  long get_int(const std::string& key, long fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get(key);
    std::size_t used = 0;
    long out = 0;
    try {
      out = std::stol(v, &used);
    } catch (const std::exception&) {
      throw DataError("config: key '" + key + "' is not an integer: " + v);
    }
    if (used != v.size()) throw DataError("config: key '" + key + "' is not an integer: " + v);
    return out;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get(key);
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw DataError("config: key '" + key + "' is not a boolean: " + v);
  }

  // comma-separated integers
  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const {
    if (!has(key)) return fallback;
    std::vector<int> out;
    std::istringstream in(get(key));
    std::string part;
    while (std::getline(in, part, ',')) {
      const std::string t = trim(part);
      if (t.empty()) throw DataError("config: empty entry in list '" + key + "'");
      out.push_back(static_cast<int>(std::stol(t)));
    }
    if (out.empty()) throw DataError("config: empty list '" + key + "'");
    return out;
  }

  void set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : items_)
      if (k == key) {
        v = value;
        return;
      }
    items_.emplace_back(key, value);
  }

  void set_int(const std::string& key, long v) { set(key, std::to_string(v)); }

  void set_double(const std::string& key, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    set(key, buf);
  }

  void set_int_list(const std::string& key, const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    set(key, s);
  }

  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : items_) out += k + " = " + v + "\n";
    return out;
  }

  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return s.substr(a, b - a);
  }

  double parse_double(const std::string& key, const std::string& v) const {
    std::size_t used = 0;
    double out = 0;
    try {
      out = std::stod(v, &used);
    } catch (const std::exception&) {
      throw DataError("config: key '" + key + "' is not a number: " + v);
    }
    if (used != v.size()) throw DataError("config: key '" + key + "' is not a number: " + v);
    return out;
  }

  std::vector<std::pair<std::string, std::string>> items_;
};

}  // namespace pixnet
