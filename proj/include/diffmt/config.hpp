#pragma once

// key = value configuration with dotted keys. "[section]" headers prefix the
// keys that follow ("[train]" then "lr = 1e-3" sets "train.lr"). '#' starts a
// comment.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace diffmt {

class Config {
 public:
  static Config parse(std::string_view text, const std::string& origin = "<string>");
  static Config load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  /// Throws InvalidArgument naming the key when it is missing or malformed.
  std::string get_string(const std::string& key) const;
  long get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  /// Comma-separated list, items trimmed, empty items dropped.
  std::vector<std::string> get_list(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  long get_int(const std::string& key, long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Canonical text (sorted keys, no sections).
  std::string to_string() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::string origin_;
  std::map<std::string, std::string> values_;
};

}  // namespace diffmt
