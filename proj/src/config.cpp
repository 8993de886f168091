#include "odegan/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace odegan {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

double parse_double(const std::string& key, const std::string& raw) {
  errno = 0;
  char* end = nullptr;
  const double x = std::strtod(raw.c_str(), &end);
  if (end == raw.c_str() || *end != '\0' || errno == ERANGE) {
    throw ConfigError("config key '" + key + "': cannot parse '" + raw + "' as a number");
  }
  return x;
}

long parse_long(const std::string& key, const std::string& raw) {
  errno = 0;
  char* end = nullptr;
  const long x = std::strtol(raw.c_str(), &end, 10);
  if (end == raw.c_str() || *end != '\0' || errno == ERANGE) {
    throw ConfigError("config key '" + key + "': cannot parse '" + raw + "' as an integer");
  }
  return x;
}

}  // namespace

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

KeyValueConfig KeyValueConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  KeyValueConfig cfg;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + stripped + "'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": empty key");
    }
    cfg.entries_[key] = value;
  }
  return cfg;
}

void KeyValueConfig::apply_override(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key=value, got '" + spec + "'");
  }
  set(trim(spec.substr(0, eq)), trim(spec.substr(eq + 1)));
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

std::string KeyValueConfig::raw_or(const std::string& key, const std::string& fallback) const {
  consumed_.insert(key);
  const auto it = entries_.find(key);
  const std::string value = it == entries_.end() ? fallback : it->second;
  echo_[key] = value;
  return value;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& def) const {
  return raw_or(key, def);
}

double KeyValueConfig::get_double(const std::string& key, double def) const {
  return parse_double(key, raw_or(key, format_double(def)));
}

long KeyValueConfig::get_long(const std::string& key, long def) const {
  return parse_long(key, raw_or(key, std::to_string(def)));
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t def) const {
  const std::string raw = raw_or(key, std::to_string(def));
  errno = 0;
  char* end = nullptr;
  const unsigned long long x = std::strtoull(raw.c_str(), &end, 10);
  if (end == raw.c_str() || *end != '\0' || errno == ERANGE) {
    throw ConfigError("config key '" + key + "': cannot parse '" + raw + "' as a seed");
  }
  return static_cast<std::uint64_t>(x);
}

bool KeyValueConfig::get_bool(const std::string& key, bool def) const {
  const std::string raw = raw_or(key, def ? "true" : "false");
  if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
  if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
  throw ConfigError("config key '" + key + "': cannot parse '" + raw + "' as a boolean");
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key,
                                                    const std::vector<double>& def) const {
  std::string fallback;
  for (size_t i = 0; i < def.size(); ++i) {
    if (i) fallback += ",";
    fallback += format_double(def[i]);
  }
  const std::string raw = raw_or(key, fallback);
  std::vector<double> out;
  for (const std::string& item : split_commas(raw)) out.push_back(parse_double(key, item));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

std::vector<std::string> KeyValueConfig::get_string_list(
    const std::string& key, const std::vector<std::string>& def) const {
  std::string fallback;
  for (size_t i = 0; i < def.size(); ++i) {
    if (i) fallback += ",";
    fallback += def[i];
  }
  const std::string raw = raw_or(key, fallback);
  std::vector<std::string> out = split_commas(raw);
  if (out.empty() || (out.size() == 1 && out[0].empty())) {
    throw ConfigError("config key '" + key + "': empty list");
  }
  return out;
}

void KeyValueConfig::require_all_consumed() const {
  std::string unknown;
  for (const auto& [key, value] : entries_) {
    if (!consumed_.count(key)) {
      if (!unknown.empty()) unknown += ", ";
      unknown += key;
    }
  }
  if (!unknown.empty()) throw ConfigError("unknown config keys: " + unknown);
}

}  // namespace odegan
