#pragma once

// Synthetic city: grid zones with archetypes, stations, calendar, rain,
// Poisson gravity demand suppressed by rain, and loop-detector car flow that
// absorbs part of the suppressed bike trips.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bikeod/features.hpp"
#include "bikeod/geo.hpp"
#include "bikeod/od.hpp"
#include "bikeod/optim.hpp"

namespace bikeod::synth {

enum class Archetype { Residential, Business, Campus };
std::string_view archetype_name(Archetype a);

struct RainConfig {
  double episodes_per_day = 0.6;
  double mean_duration_hours = 3.0;
  double mean_intensity = 1.5;  // mm/h
  friend bool operator==(const RainConfig&, const RainConfig&) = default;
};

struct SynthConfig {
  std::size_t grid = 5;  // grid x grid zones
  double cell_size = 1000.0;  // meters
  std::size_t stations_per_zone = 3;
  std::string start_date = "2023-01-02";
  std::size_t days = 60;
  double gravity_exponent = 1.5;
  double trips_per_hour = 400.0;  // city total at profile 1, before damping
  std::array<double, 24> weekday_profile = {0.05, 0.03, 0.02, 0.02, 0.05, 0.2,  0.6,  1.6,  2.0,  1.2,  0.8,  0.9,
                                            1.1,  1.0,  0.9,  1.0,  1.3,  1.9,  1.8,  1.2,  0.8,  0.5,  0.3,  0.1};
  std::array<double, 24> weekend_profile = {0.15, 0.1,  0.05, 0.03, 0.03, 0.05, 0.15, 0.3,  0.5,  0.8,  1.0,  1.2,
                                            1.3,  1.3,  1.3,  1.3,  1.3,  1.2,  1.0,  0.8,  0.6,  0.4,  0.3,  0.2};
  /// First day (offset from start) and length of the school-holiday block.
  std::size_t holiday_start_day = 21;
  std::size_t holiday_days = 9;
  double holiday_damping = 0.7;
  RainConfig rain;
  double beta = 0.7;             // demand multiplier exp(-beta * hr)
  double recovery_share = 0.5;   // share of last hour's suppressed trips added in the first dry hour
  double substitution = 0.3;     // car flow per suppressed bike trip from the zone
  std::size_t loops_per_zone = 2;
  double flow_per_loop = 200.0;  // vehicles per hour at profile 1
  double flow_noise = 0.05;      // relative sd
  double corrupt_fraction = 0.02;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;
  HourGrid grid_hours() const;
  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

struct City {
  geo::ZonePartition partition;
  std::vector<geo::Station> stations;
  std::map<std::string, Archetype> archetypes;
  features::Calendar calendar;
  /// Loop id -> zone id.
  std::map<std::string, std::string> loops;
};

City generate_city(const SynthConfig& config);
/// Archetype prototype functionality vector (5 land-use shares).
std::vector<double> archetype_vector(Archetype a);

struct RainEpisode {
  Hour start;
  std::size_t hours = 0;
};

struct SynthWeather {
  features::WeatherSeries series;
  std::vector<RainEpisode> episodes;
};

/// Poisson episode arrivals; within an episode hr > 0 and hd in (0, 60].
SynthWeather generate_weather(const SynthConfig& config);

/// Per-hour ground truth of the demand process; identical for every OD.
struct HourTruth {
  Hour t;
  double calendar_factor = 0.0;  // profile * holiday damping
  double rain_factor = 1.0;      // exp(-beta * hr)
  double recovery = 0.0;         // extra rate as a multiple of the gravity share
  double expected_trips = 0.0;   // city total over inter-zone ODs
  std::size_t trips = 0;
  std::size_t zero_ods = 0;
};

struct SynthDemand {
  ODDemandPanel counts;  // all inter-zone ODs
  Tensor base_rate;      // [T, N] rate without rain effects
  Tensor rate;           // [T, N] actual Poisson rate
  std::vector<HourTruth> truth;
};

/// Normalized gravity shares over inter-zone ODs, in all_od_pairs order.
std::vector<double> gravity_shares(const SynthConfig& config, const City& city);
SynthDemand generate_demand(const SynthConfig& config, const City& city, const features::WeatherSeries& weather);
/// One trip per counted unit with random in-zone stations.
std::vector<features::Trip> expand_trips(const SynthConfig& config, const City& city, const ODDemandPanel& counts);

struct SynthFlow {
  std::vector<features::LoopRecord> records;
  Tensor zone_flow;  // [T, Z] hourly zone flow before disaggregation
  std::size_t corrupted = 0;
};

SynthFlow generate_flow(const SynthConfig& config, const City& city, const SynthDemand& demand);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);
std::uint64_t sample_poisson(double lambda, Rng& rng);

struct SynthData {
  City city;
  SynthWeather weather;
  SynthDemand demand;
  SynthFlow flow;
};

SynthData generate_all(const SynthConfig& config);

/// Writes zones.geojson, stations.csv, calendar.csv, weather.csv,
/// trips.csv, loops.csv, loop_zones.csv and ground_truth.json. Returns the
/// written paths in that order.
std::vector<std::filesystem::path> write_dataset(const std::filesystem::path& dir, const SynthConfig& config,
                                                 const SynthData& data);
std::string ground_truth_json(const SynthConfig& config, const SynthData& data);

}  // namespace bikeod::synth
