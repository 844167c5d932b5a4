#include "diffmt/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "diffmt/common.hpp"

namespace diffmt {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string unquote(std::string v) {
  if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\''))) {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

}  // namespace

Config Config::parse(std::string_view text, const std::string& origin) {
  Config cfg;
  cfg.origin_ = origin;
  std::istringstream in{std::string(text)};
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    const std::string s = trim(line);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw InvalidArgument(origin + ":" + std::to_string(line_no) + ": unterminated section");
      section = trim(std::string_view(s).substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgument(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(std::string_view(s).substr(0, eq));
    if (key.empty()) throw InvalidArgument(origin + ":" + std::to_string(line_no) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    cfg.values_[key] = unquote(trim(std::string_view(s).substr(eq + 1)));
  }
  return cfg;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

std::string Config::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw InvalidArgument("missing config key '" + key + "'");
  return it->second;
}

long Config::get_int(const std::string& key) const {
  const std::string v = get_string(key);
  long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw InvalidArgument("config key '" + key + "' is not an integer: '" + v + "'");
  }
  return out;
}

std::uint64_t Config::get_uint(const std::string& key) const {
  const std::string v = get_string(key);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw InvalidArgument("config key '" + key + "' is not a non-negative integer: '" + v + "'");
  }
  return out;
}

double Config::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw InvalidArgument("config key '" + key + "' is not a number: '" + v + "'");
}

bool Config::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InvalidArgument("config key '" + key + "' is not a boolean: '" + v + "'");
}

std::vector<std::string> Config::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(get_string(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? get_string(key) : fallback;
}
long Config::get_int(const std::string& key, long fallback) const { return has(key) ? get_int(key) : fallback; }
double Config::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}
bool Config::get_bool(const std::string& key, bool fallback) const { return has(key) ? get_bool(key) : fallback; }

std::string Config::to_string() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace diffmt
