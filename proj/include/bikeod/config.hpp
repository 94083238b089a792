#pragma once

// Declarative run configuration (JSON). Unknown keys are rejected and every
// problem is collected with its key path before failing.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bikeod/model.hpp"
#include "bikeod/pipeline.hpp"
#include "bikeod/synth.hpp"
#include "json.hpp"

namespace bikeod::config {

/// Input files; empty paths mean "use the synth stage outputs".
struct DataPaths {
  std::string zones;
  std::string stations;
  std::string trips;
  std::string weather;
  std::string calendar;
  std::string loops;
  std::string loop_zones;
  bool synthetic() const;
  friend bool operator==(const DataPaths&, const DataPaths&) = default;
};

struct SplitConfig {
  /// Either all four set (ISO hours), or all empty to take the last
  /// `test_days` of the calendar as the test window.
  std::string train_start, train_end, test_start, test_end;
  std::size_t test_days = 14;
  int first_hour = 7;
  int end_hour = 21;
  friend bool operator==(const SplitConfig&, const SplitConfig&) = default;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "run";
  DataPaths data;
  synth::SynthConfig synth;
  std::size_t target_zones = 50;
  double p_bike = 0.6;
  SplitConfig split;
  std::vector<std::string> variants = features::variant_names();
  pipeline::TrainConfig train;
  model::ModelConfig model;
  bool dump_predictions = false;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> errors);
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  std::vector<std::string> errors_;
};

/// Throws ConfigError listing every problem.
RunConfig parse_config(const nlohmann::json& j);
/// Empty or whitespace-only text is the default configuration.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Normalized form with every default filled in; parse_config(to_json(c)) == c.
nlohmann::json to_json(const RunConfig& c);

}  // namespace bikeod::config
