#pragma once

// Splits, training loop, metrics, weather scenarios and comparison reports.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bikeod/features.hpp"
#include "bikeod/kernels.hpp"
#include "bikeod/model.hpp"

namespace bikeod::pipeline {

struct TrainConfig {
  double lr = 5e-5;
  double decay = 1e-6;
  double dropout = 0.7;
  std::size_t batch_size = 16;
  std::size_t epochs = 80;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument describing the first bad field.
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Hours [begin, end).
struct TimeWindow {
  Hour begin;
  Hour end;
  bool contains(Hour t) const { return t >= begin && t < end; }
  bool overlaps(const TimeWindow& o) const { return begin < o.end && o.begin < end; }
};

struct SplitSpec {
  TimeWindow train;
  TimeWindow test;
  features::DayWindow test_hours;  // 7..21 by default

  /// Throws std::invalid_argument on empty or overlapping windows.
  void validate() const;
  std::vector<Hour> train_timestamps() const;
  /// Test timestamps whose hour of day lies inside `test_hours`.
  std::vector<Hour> test_timestamps() const;
};

/// One timestamp: features for all N ODs, calendar encoding, target [N, 1].
struct Sample {
  Hour t;
  Tensor x;
  features::CalendarEncoding encoding;
  Tensor y;
};

struct Dataset {
  features::FeatureSpec spec;
  std::vector<Sample> samples;
  std::size_t skipped = 0;  // hours dropped for missing history or offsets
  std::size_t nodes() const { return samples.empty() ? 0 : samples.front().x.rows(); }
};

/// Samples for every requested hour that has all lags and weather / flow
/// offsets inside the data. Hours lacking them are skipped and counted.
Dataset build_dataset(const features::FeatureSpec& spec, const ODDemandPanel& panel,
                      const features::WeatherSeries* weather, const features::ZoneFlowSeries* flows,
                      const features::Calendar& calendar, const std::vector<Hour>& hours);

struct TrainResult {
  model::ForecastModel model;
  std::vector<double> loss_curve;     // mean per-sample training loss per epoch
  std::vector<double> holdout_curve;  // empty without a holdout set
};

/// Mini-batch Adam on MSE. Fits the scaler on `train` when the model has
/// none. Throws ad::NonFiniteError with epoch and batch context.
TrainResult train(model::ForecastModel model, const Dataset& train, const GraphStack& stack,
                  const TrainConfig& config, const Dataset* holdout = nullptr);

// --- metrics --------------------------------------------------------------------------

/// Mean squared error. Throws std::invalid_argument on empty or mismatched
/// input.
double mse(std::span<const double> predicted, std::span<const double> actual);
/// Mean of |p - a| / a over entries with a > 0. Throws std::invalid_argument
/// when there is none.
double mape(std::span<const double> predicted, std::span<const double> actual);
double mse(const Tensor& predicted, const Tensor& actual);
double mape(const Tensor& predicted, const Tensor& actual);

// --- predictions ------------------------------------------------------------------------

/// Row i of `actual` / `predicted` belongs to hours[i]; columns are ODs.
struct Predictions {
  std::vector<Hour> hours;
  Tensor actual;
  Tensor predicted;
  Predictions rows(const std::vector<std::size_t>& keep) const;
};

/// Inference over every sample; parallel over timestamps.
Predictions predict_dataset(const model::ForecastModel& model, const Dataset& data, const GraphStack& stack);

/// CSV `ts,od_index,actual,predicted`.
void write_predictions(std::ostream& out, const Predictions& p);
Predictions read_predictions(const std::filesystem::path& path);

// --- scenarios ----------------------------------------------------------------------------

enum class Predicate { Always, HrZero, HrAbove, DcrZero, DcrBand };

struct ScenarioFilter {
  std::string id;
  Predicate predicate = Predicate::Always;
  double low = 0.0;  // HrAbove threshold, DcrBand open lower bound
  double high = std::numeric_limits<double>::infinity();  // DcrBand closed upper bound
  /// dcr predicates look at the calendar day of `t`.
  bool matches(const features::WeatherSeries& weather, Hour t) const;
};

/// all, hr=0, hr>0, hr>1, dcr=0, 0<dcr<=1, 1<dcr<=3, dcr>3.
const std::vector<ScenarioFilter>& default_scenarios();
/// Throws std::invalid_argument listing the known ids.
const ScenarioFilter& scenario(std::string_view id);

struct ScenarioStats {
  std::size_t hours = 0;
  double zero_fraction = 0.0;
};

struct ScenarioSubset {
  Predictions data;
  ScenarioStats stats;
};

/// Keeps the hours matching `filter`. Throws DataError if the weather does
/// not cover an hour.
ScenarioSubset apply_scenario(const Predictions& test, const features::WeatherSeries& weather,
                              const ScenarioFilter& filter);
/// Hour indices of `hours` matching `filter`.
std::vector<std::size_t> scenario_rows(const std::vector<Hour>& hours, const features::WeatherSeries& weather,
                                       const ScenarioFilter& filter);

// --- reports --------------------------------------------------------------------------------

struct MetricsRow {
  std::string variant;
  std::string scenario;
  std::optional<double> mse;
  std::optional<double> mape;
  std::size_t hours = 0;
  double zero_fraction = 0.0;
  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;

  const MetricsRow* find(std::string_view variant, std::string_view scenario) const;
  /// `variant,scenario,mse,mape,hours,zero_fraction`; absent metrics are empty.
  std::string to_csv() const;
  /// Aligned tables: overall, then weather (W), car-flow (I) and
  /// time-embedding (T) families on their scenarios.
  std::string to_text() const;
  static MetricsReport from_csv(std::string_view text);
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Metrics for one variant's predictions on every scenario.
std::vector<MetricsRow> score(const std::string& variant, const Predictions& test,
                              const features::WeatherSeries& weather, const std::vector<ScenarioFilter>& scenarios);

struct VariantRun {
  const model::ForecastModel* model = nullptr;
  const Dataset* test = nullptr;
};

/// Inference and scoring for each run; rows in run order, then scenario
/// order. Throws std::invalid_argument when a model's variant differs from
/// its dataset's.
MetricsReport evaluate(const std::vector<VariantRun>& runs, const GraphStack& stack,
                       const features::WeatherSeries& weather,
                       const std::vector<ScenarioFilter>& scenarios = default_scenarios());

}  // namespace bikeod::pipeline
