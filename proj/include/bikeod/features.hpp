#pragma once

// Demand panels, loop-detector cleaning, weather and calendar series, and
// the per-timestamp feature matrices: 4 demand lags, then weather terms,
// then car-flow terms at the OD's origin zone.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bikeod/geo.hpp"
#include "bikeod/od.hpp"
#include "bikeod/tensor.hpp"
#include "bikeod/timegrid.hpp"

namespace bikeod::features {

// --- trips and the demand panel ---------------------------------------------

struct Trip {
  Hour departure;
  std::string origin_station;
  std::string dest_station;
};

/// CSV `departure_ts,origin_station,dest_station`.
std::vector<Trip> load_trips(const std::filesystem::path& path);

/// Every ordered pair of distinct zones in partition order.
std::vector<ODPair> all_od_pairs(const geo::ZonePartition& partition);

/// Counts trips per (departure hour, OD pair). Stations without a zone are
/// assigned first. Intra-zone trips are dropped.
ODDemandPanel trips_to_panel(const std::vector<Trip>& trips, std::vector<geo::Station> stations,
                             const geo::ZonePartition& partition, HourGrid grid);

struct DayWindow {
  int first_hour = 7;  // inclusive
  int end_hour = 21;   // exclusive
  bool contains(int hour) const { return hour >= first_hour && hour < end_hour; }
};

/// Smallest set of highest-demand ODs (demand summed over hours inside
/// `window`) whose share reaches `p_bike`. Ties in demand go to the lower
/// index. Returned in ascending index order with the original indices.
std::vector<ODPair> filter_top_ods(const ODDemandPanel& panel, double p_bike, DayWindow window = {});

/// Restricts a panel to the given ODs and renumbers them densely.
ODDemandPanel restrict_panel(const ODDemandPanel& panel, const std::vector<ODPair>& od_pairs);

inline constexpr std::array<int, 4> kLagOffsets = {-168, -24, -2, -1};

/// [N, 4]: Y at t-168h, t-24h, t-2h, t-1h.
Tensor build_lags(const ODDemandPanel& panel, Hour t);

// --- loop detectors and zone flows ----------------------------------------------

struct LoopRecord {
  std::int64_t minute = 0;  // minutes since epoch
  std::string loop_id;
  std::optional<double> flow;  // vehicles in the 6-minute period
  std::optional<double> occupancy;  // percent
};

/// CSV `ts,loop_id,flow,occupancy`; empty flow/occupancy cells are missing.
std::vector<LoopRecord> load_loop_records(const std::filesystem::path& path);

/// Valid hourly flows per loop; hours that fail the cleaning rule are absent.
using LoopHourly = std::map<std::string, std::map<Hour, double>>;

inline constexpr double kMaxOccupancy = 50.0;
inline constexpr int kMinValidPeriods = 5;

/// A 6-minute period is valid when its flow is present and occupancy is
/// present and <= 50 %. An hour is kept with >= 5 valid periods; its flow is
/// sum * 10 / valid_count.
LoopHourly clean_loop_data(const std::vector<LoopRecord>& records);

/// CSV `loop_id,zone_id`.
std::map<std::string, std::string> load_loop_zones(const std::filesystem::path& path);

struct ZoneFlowSeries {
  HourGrid grid;
  std::vector<std::string> zones;
  Tensor flow;  // [T, Z]

  std::size_t zone_index(const std::string& id) const;
  double at(const std::string& zone, Hour t) const;
};

/// Sums loop flows per zone and hour, then fills zone-hours without any
/// report by linear interpolation (edges: nearest value).
ZoneFlowSeries aggregate_flow_by_zone(const LoopHourly& hourly, const std::map<std::string, std::string>& loop_to_zone,
                                      const std::vector<std::string>& zones, HourGrid grid);

/// Linear interpolation over missing entries; leading and trailing gaps take
/// the nearest value. Throws DataError when every entry is missing.
std::vector<double> interpolate_gaps(const std::vector<std::optional<double>>& series);

// --- weather --------------------------------------------------------------------

struct WeatherSeries {
  HourGrid grid;
  std::vector<double> hr;  // mm/h
  std::vector<double> hd;  // minutes of rain in the hour
  std::map<Date, double> dcr;  // mm per calendar day

  double hr_at(Hour t) const;
  double hd_at(Hour t) const;
  double dcr_at(Hour t) const;
};

/// Computes dcr as the per-day sum of hr (partial days at the grid edges sum
/// the hours present). Validates hr >= 0 and 0 <= hd <= 60.
WeatherSeries make_weather(HourGrid grid, std::vector<double> hr, std::vector<double> hd);

/// CSV `ts,hr,hd` resampled onto `grid`; missing hours interpolated.
WeatherSeries load_weather(const std::filesystem::path& path, HourGrid grid);

// --- calendar ----------------------------------------------------------------------

struct CalendarDay {
  bool business_day = false;
  bool school_holiday = false;
  bool holiday_departure = false;
  bool holiday_return = false;
  friend bool operator==(const CalendarDay&, const CalendarDay&) = default;
};

using Calendar = std::map<Date, CalendarDay>;

/// CSV `date,business_day,school_holiday,holiday_departure,holiday_return`
/// with 0/1 flags.
Calendar load_calendar(const std::filesystem::path& path);
void save_calendar(const std::filesystem::path& path, const Calendar& calendar);

inline constexpr std::size_t kCalendarFeatures = 6;
inline constexpr std::array<std::size_t, kCalendarFeatures> kCalendarClasses = {18, 7, 2, 2, 2, 2};

/// 1..17 for 06:00..22:00, 0 otherwise.
int hour_class(int hour_of_day);

struct CalendarEncoding {
  /// Active class per feature: hour, weekday (0 = Monday), business day,
  /// school holiday, holiday departure day, holiday return day.
  std::array<std::size_t, kCalendarFeatures> classes{};

  /// One-hot row vector [1, kCalendarClasses[i]].
  Tensor one_hot(std::size_t feature) const;
  friend bool operator==(const CalendarEncoding&, const CalendarEncoding&) = default;
};

/// Throws DataError when the date is not in the calendar.
CalendarEncoding encode_calendar(Hour t, const Calendar& calendar);
/// Throws DataError unless every class index is in range.
void validate_encoding(const CalendarEncoding& encoding);

// --- feature variants -----------------------------------------------------------

enum class Signal { hr, hd, dcr };
std::string_view signal_name(Signal s);

struct WeatherTerm {
  Signal signal;
  int offset;  // <= 0 past, > 0 forecast (recorded actuals)
  friend bool operator==(const WeatherTerm&, const WeatherTerm&) = default;
};

struct FeatureSpec {
  std::string variant;
  std::vector<WeatherTerm> weather_terms;
  std::vector<int> flow_terms;
  bool embedding = false;

  std::size_t width() const { return kLagOffsets.size() + weather_terms.size() + flow_terms.size(); }
  bool uses_weather() const { return !weather_terms.empty(); }
  bool uses_flow() const { return !flow_terms.empty(); }
  /// Column labels in order.
  std::vector<std::string> column_names() const;
  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

/// X, T, W1..W7, I1..I5, WIT.
const std::vector<std::string>& variant_names();
/// Throws std::invalid_argument listing the valid names.
FeatureSpec feature_spec(std::string_view variant);

struct FeatureMatrix {
  Hour t;
  Tensor x;  // [N, L]
};

/// Earliest and one-past-latest t with every offset of `spec` available.
std::pair<Hour, Hour> feature_range(const FeatureSpec& spec, const HourGrid& panel_grid);

/// Assembles [N, L] at time t. `weather` / `flows` may be null when the
/// spec does not need them.
FeatureMatrix assemble_features(const FeatureSpec& spec, const ODDemandPanel& panel, const WeatherSeries* weather,
                                const ZoneFlowSeries* flows, Hour t);

/// Parallel over timestamps; output in the order of `hours`.
std::vector<FeatureMatrix> assemble_all(const FeatureSpec& spec, const ODDemandPanel& panel,
                                        const WeatherSeries* weather, const ZoneFlowSeries* flows,
                                        const std::vector<Hour>& hours);

/// Per-column z-score fitted on training matrices (all rows of all
/// timestamps). Columns with zero spread keep scale 1.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const std::vector<FeatureMatrix>& train);
  Tensor apply(const Tensor& x) const;
  friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

}  // namespace bikeod::features
