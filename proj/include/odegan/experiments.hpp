// Experiment runners behind the CLI: each one consumes its configuration
// keys, executes, writes CSV data files (first line is a schema tag, floats
// as %.17g, no timestamps) plus a plot-hint file and a JSON summary, and
// returns the summary. Timestamps live only in the summary so reruns with
// the same config and seed reproduce byte-identical CSV bodies.
#pragma once

#include "odegan/config.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace odegan {

struct Threshold {
  std::string name;
  double value = 0.0;
  std::optional<double> lo;  // pass requires value >= lo (when present)
  std::optional<double> hi;  // pass requires value <= hi (when present)
  bool pass = false;
};

Threshold make_threshold(const std::string& name, double value, std::optional<double> lo,
                         std::optional<double> hi);

struct RunSummary {
  std::string kind;
  std::string status = "completed";  // completed | aborted
  std::string abort_reason;
  long abort_iteration = -1;
  std::map<std::string, std::string> config;  // effective key/value echo
  nlohmann::json metrics = nlohmann::json::object();
  std::vector<Threshold> thresholds;
  std::vector<std::string> files;  // emitted data files, relative to the run dir
  std::string started_utc;
  double wall_s = 0.0;

  bool thresholds_pass() const;
  // 0 = all declared thresholds met, 2 = completed with failures, 3 = aborted.
  int exit_code() const;
  nlohmann::json to_json() const;
};

RunSummary run_toy(KeyValueConfig& cfg, const std::filesystem::path& out_dir);
RunSummary run_order_test(KeyValueConfig& cfg, const std::filesystem::path& out_dir);
RunSummary run_mog(KeyValueConfig& cfg, const std::filesystem::path& out_dir);
RunSummary run_reg_sweep(KeyValueConfig& cfg, const std::filesystem::path& out_dir);
RunSummary run_eigen_check(KeyValueConfig& cfg, const std::filesystem::path& out_dir);
RunSummary run_linear_probe(KeyValueConfig& cfg, const std::filesystem::path& out_dir);

// Dispatch by subcommand name; throws ConfigError for an unknown kind.
RunSummary run_experiment(const std::string& kind, KeyValueConfig& cfg,
                          const std::filesystem::path& out_dir);

// CLI --out beats the ODEGAN_OUTPUT_DIR environment variable beats the
// output_dir config key beats ".".
std::filesystem::path resolve_output_dir(const KeyValueConfig& cfg, const std::string& cli_out);

}  // namespace odegan
