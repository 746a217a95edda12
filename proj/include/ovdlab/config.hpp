#pragma once

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace ovdlab {

// Flat "key = value" text. '#' starts a comment; blank lines are ignored;
// lists are comma separated. Every accessor records the key as used so that
// callers can reject typos with unused_keys().
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, const std::string& origin = "<config>");
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  long get_int(const std::string& key, long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  std::vector<std::string> unused_keys() const;
  // Throws ConfigError naming the first unused key, if any.
  void reject_unused() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  const std::string* find(const std::string& key) const;
  std::string origin_;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace ovdlab
