#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "surge/errors.hpp"

namespace surge {

// Flat declarative key-value configuration: one `key = value` per line,
// '#' comments, mandatory schema_version. Every run archives its resolved
// config next to its outputs, so the format stays trivially diffable.
class KvConfig {
public:
  static constexpr int kSchemaVersion = 1;

  KvConfig() { set("schema_version", std::to_string(kSchemaVersion)); }

  static KvConfig parse(const std::string& text, const std::string& origin) {
    KvConfig cfg;
    cfg.values_.clear();
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos) {
        throw config_error(origin + ":" + std::to_string(lineno) +
                           ": expected 'key = value', got '" + trimmed + "'");
      }
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty()) {
        throw config_error(origin + ":" + std::to_string(lineno) + ": empty key");
      }
      if (cfg.values_.count(key)) {
        throw config_error(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key +
                           "'");
      }
      cfg.values_[key] = value;
    }
    const int v = cfg.get_int("schema_version", -1);
    if (v != kSchemaVersion) {
      throw config_error(origin + ": schema_version must be " +
                         std::to_string(kSchemaVersion));
    }
    return cfg;
  }

  static KvConfig load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot read config file " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(text, path);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t used;
      auto v = std::stoll(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw config_error("config key '" + key + "': '" + it->second + "' is not an integer");
    }
  }

  double get_real(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t used;
      double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw config_error("config key '" + key + "': '" + it->second + "' is not a number");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw config_error("config key '" + key + "': '" + it->second + "' is not a boolean");
  }

  // schema_version first, remaining keys sorted
  std::string serialize() const {
    std::string out = "schema_version = " + get("schema_version", "1") + "\n";
    for (const auto& [k, v] : values_) {
      if (k == "schema_version") continue;
      out += k + " = " + v + "\n";
    }
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write " + path);
    out << serialize();
    if (!out) throw io_error("write failed: " + path);
  }

  const std::map<std::string, std::string>& values() const { return values_; }

private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace surge
