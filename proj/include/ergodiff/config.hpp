#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ergodiff {

/// Configuration problem; `line` is 0 when not tied to a line of the file.
class ConfigError : public std::runtime_error
{
public:
  ConfigError(const std::string& what, int line = 0)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line)
  {
  }
  int line() const { return line_; }

private:
  int line_;
};

/// Flat key = value text. `[section]` headers prefix the following keys
/// with "section."; dotted keys may also be written out in full. '#'
/// starts a comment. Lists are comma separated.
class Config
{
public:
  static Config parse(std::istream& in)
  {
    Config cfg;
    std::string raw;
    std::string section;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      const auto hash = raw.find('#');
      std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
      if (text.empty()) {
        continue;
      }
      if (text.front() == '[') {
        if (text.back() != ']' || text.size() < 3) {
          throw ConfigError("malformed section header '" + text + "'", line);
        }
        section = trim(text.substr(1, text.size() - 2));
        continue;
      }
      const auto eq = text.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("expected 'key = value', got '" + text + "'", line);
      }
      const std::string key = trim(text.substr(0, eq));
      const std::string value = trim(text.substr(eq + 1));
      if (key.empty()) {
        throw ConfigError("empty key", line);
      }
      const std::string full = section.empty() ? key : section + "." + key;
      if (cfg.entries_.count(full)) {
        throw ConfigError("duplicate key '" + full + "'", line);
      }
      cfg.entries_[full] = {value, line};
    }
    return cfg;
  }

  static Config parse_string(const std::string& text)
  {
    std::istringstream in(text);
    return parse(in);
  }

  static Config load(const std::string& file)
  {
    std::ifstream in(file);
    if (!in) {
      throw ConfigError("cannot open config file '" + file + "'");
    }
    return parse(in);
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) { entries_[key] = {value, 0}; }

  int line_of(const std::string& key) const
  {
    const auto it = entries_.find(key);
    return it == entries_.end() ? 0 : it->second.line;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const
  {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second.value;
  }

  double get_double(const std::string& key, double fallback) const
  {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : to_double(key, it->second.value, it->second.line);
  }

  long long get_int(const std::string& key, long long fallback) const
  {
    const auto it = entries_.find(key);
    if (it == entries_.end()) {
      return fallback;
    }
    long long v = 0;
    const auto& s = it->second.value;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError("key '" + key + "': expected an integer, got '" + s + "'", it->second.line);
    }
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) const
  {
    const auto it = entries_.find(key);
    if (it == entries_.end()) {
      return fallback;
    }
    const auto& s = it->second.value;
    if (s == "true" || s == "yes" || s == "1" || s == "on") {
      return true;
    }
    if (s == "false" || s == "no" || s == "0" || s == "off") {
      return false;
    }
    throw ConfigError("key '" + key + "': expected a boolean, got '" + s + "'", it->second.line);
  }

  std::vector<double> get_list(const std::string& key, std::vector<double> fallback) const
  {
    const auto it = entries_.find(key);
    if (it == entries_.end()) {
      return fallback;
    }
    std::vector<double> out;
    std::stringstream ss(it->second.value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      out.push_back(to_double(key, trim(item), it->second.line));
    }
    if (out.empty()) {
      throw ConfigError("key '" + key + "': empty list", it->second.line);
    }
    return out;
  }

  /// Keys present in the file but never listed in `known`.
  std::vector<std::string> unknown_keys(const std::vector<std::string>& known) const
  {
    std::vector<std::string> out;
    for (const auto& [key, entry] : entries_) {
      bool found = false;
      for (const auto& k : known) {
        found = found || k == key;
      }
      if (!found) {
        out.push_back(key);
      }
    }
    return out;
  }

private:
  struct Entry
  {
    std::string value;
    int line = 0;
  };

  static std::string trim(const std::string& s)
  {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
      return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static double to_double(const std::string& key, const std::string& s, int line)
  {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) {
        throw std::invalid_argument(s);
      }
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': expected a number, got '" + s + "'", line);
    }
  }

  std::map<std::string, Entry> entries_;
};

} // namespace ergodiff
