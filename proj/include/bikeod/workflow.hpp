#pragma once

// Stage runner: synth -> aggregate -> graphs -> featurize -> train -> eval
// -> report. Each stage reads the artifacts of earlier stages, checks their
// digests against the run manifest, and records its own outputs there.

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bikeod/config.hpp"

namespace bikeod::workflow {

const std::vector<std::string>& stage_names();

/// A required artifact has not been produced yet.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An artifact or the configuration changed after the producing stage ran.
class StaleArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Hex SHA-256 of a file's bytes.
std::string file_digest(const std::filesystem::path& path);
std::string text_digest(std::string_view text);

/// Runs one stage; progress lines go to `log`. Throws std::invalid_argument
/// for an unknown stage.
void run_stage(std::string_view stage, const config::RunConfig& config, std::ostream& log);

/// Runs every stage in order.
void run_all(const config::RunConfig& config, std::ostream& log);

}  // namespace bikeod::workflow
