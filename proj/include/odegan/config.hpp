// Flat key = value configuration with dotted sections, e.g.
//
//   seed = 3
//   trainer.stepper = rk4
//   trainer.h = 0.03
//
// plus command-line overrides ("--set key=value"). Precedence: CLI override >
// environment (output directory only) > file > built-in defaults. Typed
// getters record the effective value so a run can echo exactly what it used,
// and any key that no getter ever consumed is reported as unknown.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace odegan {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig from_file(const std::filesystem::path& path);

  // "key=value"; later overrides win.
  void apply_override(const std::string& spec);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& def) const;
  double get_double(const std::string& key, double def) const;
  long get_long(const std::string& key, long def) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const;
  bool get_bool(const std::string& key, bool def) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& def) const;
  std::vector<std::string> get_string_list(const std::string& key,
                                           const std::vector<std::string>& def) const;

  // Throws ConfigError naming every key that was set but never consumed.
  void require_all_consumed() const;

  // Effective values (defaults included) for every key consumed so far.
  const std::map<std::string, std::string>& echo() const { return echo_; }

 private:
  std::string raw_or(const std::string& key, const std::string& fallback) const;

  std::map<std::string, std::string> entries_;
  mutable std::set<std::string> consumed_;
  mutable std::map<std::string, std::string> echo_;
};

std::string format_double(double x);  // %.17g, shared by config echo and CSV

}  // namespace odegan
