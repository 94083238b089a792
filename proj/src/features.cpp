#include "bikeod/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include <fmt/core.h>
#include <fmt/format.h>

#include "bikeod/csv.hpp"
#include "bikeod/error.hpp"

namespace bikeod::features {

namespace {

bool parse_flag(const CsvTable& t, std::size_t r, std::size_t c) {
  const auto& s = t.cell(r, c);
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw DataError(fmt::format("{}: row {}: '{}' is not a 0/1 flag (column '{}')", t.source(), r + 2, s, t.header()[c]));
}

std::optional<double> optional_number(const CsvTable& t, std::size_t r, std::size_t c) {
  if (t.cell(r, c).empty()) return std::nullopt;
  return t.number(r, c);
}

}  // namespace

// --- trips and the demand panel ---------------------------------------------

std::vector<Trip> load_trips(const std::filesystem::path& path) {
  const auto t = CsvTable::read(path);
  const auto ts = t.column("departure_ts"), o = t.column("origin_station"), d = t.column("dest_station");
  std::vector<Trip> out;
  out.reserve(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    try {
      out.push_back(Trip{parse_hour(t.cell(r, ts)), t.cell(r, o), t.cell(r, d)});
    } catch (const DataError& e) {
      throw DataError(fmt::format("{}: row {}: {}", t.source(), r + 2, e.what()));
    }
  }
  return out;
}

std::vector<ODPair> all_od_pairs(const geo::ZonePartition& partition) {
  std::vector<ODPair> out;
  for (std::size_t i = 0; i < partition.size(); ++i)
    for (std::size_t j = 0; j < partition.size(); ++j)
      if (i != j) out.push_back(ODPair{out.size(), partition.zone(i).id, partition.zone(j).id});
  return out;
}

ODDemandPanel trips_to_panel(const std::vector<Trip>& trips, std::vector<geo::Station> stations,
                             const geo::ZonePartition& partition, HourGrid grid) {
  const bool needs_assignment =
      std::any_of(stations.begin(), stations.end(), [](const geo::Station& s) { return s.zone_id.empty(); });
  if (needs_assignment) stations = geo::assign_stations(partition, std::move(stations));
  std::map<std::string, std::size_t> zone_of;
  for (const auto& s : stations) zone_of[s.id] = partition.index_of(s.zone_id);

  const std::size_t z = partition.size();
  ODDemandPanel panel;
  panel.od_pairs = all_od_pairs(partition);
  panel.grid = grid;
  panel.demand = Tensor(grid.count, panel.od_pairs.size());
  for (const auto& trip : trips) {
    const auto o = zone_of.find(trip.origin_station);
    if (o == zone_of.end()) throw DataError(fmt::format("trip references unknown station '{}'", trip.origin_station));
    const auto d = zone_of.find(trip.dest_station);
    if (d == zone_of.end()) throw DataError(fmt::format("trip references unknown station '{}'", trip.dest_station));
    if (!grid.contains(trip.departure)) {
      throw DataError(fmt::format("trip departure {} is outside the hour grid [{}, {})", format_hour(trip.departure),
                                  format_hour(grid.start), format_hour(grid.end())));
    }
    const std::size_t i = o->second, j = d->second;
    if (i == j) continue;
    const std::size_t od = i * (z - 1) + (j < i ? j : j - 1);
    panel.demand(grid.index(trip.departure), od) += 1.0;
  }
  return panel;
}

std::vector<ODPair> filter_top_ods(const ODDemandPanel& panel, double p_bike, DayWindow window) {
  if (!(p_bike > 0.0 && p_bike <= 1.0)) throw std::invalid_argument(fmt::format("p_bike must be in (0, 1], got {}", p_bike));
  std::vector<double> total(panel.size(), 0.0);
  for (std::size_t r = 0; r < panel.grid.count; ++r) {
    if (!window.contains(hour_of_day(panel.grid.at(r)))) continue;
    for (std::size_t c = 0; c < panel.size(); ++c) total[c] += panel.demand(r, c);
  }
  const double sum = std::accumulate(total.begin(), total.end(), 0.0);
  if (!(sum > 0.0)) throw DataError("cannot filter ODs: the panel has no demand inside the day window");
  std::vector<std::size_t> order(panel.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return total[a] > total[b]; });
  std::vector<std::size_t> keep;
  double cum = 0.0;
  for (auto idx : order) {
    if (total[idx] <= 0.0) break;
    keep.push_back(idx);
    cum += total[idx];
    if (cum >= p_bike * sum) break;
  }
  std::sort(keep.begin(), keep.end());
  std::vector<ODPair> out;
  for (auto idx : keep) out.push_back(panel.od_pairs[idx]);
  return out;
}

ODDemandPanel restrict_panel(const ODDemandPanel& panel, const std::vector<ODPair>& od_pairs) {
  std::vector<std::size_t> idx;
  for (const auto& od : od_pairs) {
    if (od.index >= panel.size() || panel.od_pairs[od.index].origin != od.origin ||
        panel.od_pairs[od.index].destination != od.destination) {
      throw DataError(fmt::format("OD pair {} ({} -> {}) is not part of the panel", od.index, od.origin, od.destination));
    }
    idx.push_back(od.index);
  }
  return panel.select(idx);
}

Tensor build_lags(const ODDemandPanel& panel, Hour t) {
  const Hour earliest = panel.grid.start - kLagOffsets.front();
  if (t < earliest || t > panel.grid.end()) {
    throw DataError(fmt::format("not enough history for lags at {}: earliest valid timestamp is {}", format_hour(t),
                                format_hour(earliest)));
  }
  Tensor x(panel.size(), kLagOffsets.size());
  for (std::size_t k = 0; k < kLagOffsets.size(); ++k) {
    const std::size_t r = panel.grid.index(t + kLagOffsets[k]);
    for (std::size_t c = 0; c < panel.size(); ++c) x(c, k) = panel.demand(r, c);
  }
  return x;
}

// --- loop detectors and zone flows ----------------------------------------------

std::vector<LoopRecord> load_loop_records(const std::filesystem::path& path) {
  const auto t = CsvTable::read(path);
  const auto ts = t.column("ts"), id = t.column("loop_id"), flow = t.column("flow"), occ = t.column("occupancy");
  std::vector<LoopRecord> out;
  out.reserve(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    try {
      out.push_back(LoopRecord{parse_minutes(t.cell(r, ts)), t.cell(r, id), optional_number(t, r, flow),
                               optional_number(t, r, occ)});
    } catch (const DataError& e) {
      throw DataError(fmt::format("{}: row {}: {}", t.source(), r + 2, e.what()));
    }
  }
  return out;
}

LoopHourly clean_loop_data(const std::vector<LoopRecord>& records) {
  struct Acc {
    std::set<std::int64_t> periods;
    double sum = 0.0;
  };
  std::map<std::string, std::map<Hour, Acc>> acc;
  for (const auto& rec : records) {
    const std::int64_t period = rec.minute >= 0 ? rec.minute / 6 : -((-rec.minute + 5) / 6);
    const Hour h{period >= 0 ? period / 10 : -((-period + 9) / 10)};
    auto& a = acc[rec.loop_id][h];
    if (!rec.flow || !rec.occupancy || *rec.occupancy > kMaxOccupancy || *rec.flow < 0.0) continue;
    if (!a.periods.insert(period).second) continue;  // duplicate record for the period
    a.sum += *rec.flow;
  }
  LoopHourly out;
  for (const auto& [loop, hours] : acc) {
    auto& dst = out[loop];
    for (const auto& [h, a] : hours) {
      const auto n = static_cast<int>(a.periods.size());
      if (n >= kMinValidPeriods) dst[h] = a.sum * 10.0 / n;
    }
  }
  return out;
}

std::map<std::string, std::string> load_loop_zones(const std::filesystem::path& path) {
  const auto t = CsvTable::read(path);
  const auto id = t.column("loop_id"), zone = t.column("zone_id");
  std::map<std::string, std::string> out;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    if (!out.emplace(t.cell(r, id), t.cell(r, zone)).second) {
      throw DataError(fmt::format("{}: duplicate loop '{}'", t.source(), t.cell(r, id)));
    }
  }
  return out;
}

std::size_t ZoneFlowSeries::zone_index(const std::string& id) const {
  const auto it = std::lower_bound(zones.begin(), zones.end(), id);
  if (it == zones.end() || *it != id) throw DataError(fmt::format("no car flow series for zone '{}'", id));
  return static_cast<std::size_t>(it - zones.begin());
}

double ZoneFlowSeries::at(const std::string& zone, Hour t) const { return flow(grid.index(t), zone_index(zone)); }

std::vector<double> interpolate_gaps(const std::vector<std::optional<double>>& series) {
  std::vector<double> out(series.size(), 0.0);
  std::optional<std::size_t> prev;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (!series[i]) continue;
    out[i] = *series[i];
    if (!prev) {
      for (std::size_t k = 0; k < i; ++k) out[k] = *series[i];
    } else {
      const std::size_t gap = i - *prev;
      for (std::size_t k = *prev + 1; k < i; ++k) {
        const double w = static_cast<double>(k - *prev) / static_cast<double>(gap);
        out[k] = (1.0 - w) * out[*prev] + w * out[i];
      }
    }
    prev = i;
  }
  if (!prev) throw DataError("series has no valid value to interpolate from");
  for (std::size_t k = *prev + 1; k < series.size(); ++k) out[k] = out[*prev];
  return out;
}

ZoneFlowSeries aggregate_flow_by_zone(const LoopHourly& hourly, const std::map<std::string, std::string>& loop_to_zone,
                                      const std::vector<std::string>& zones, HourGrid grid) {
  ZoneFlowSeries out;
  out.grid = grid;
  out.zones = zones;
  std::sort(out.zones.begin(), out.zones.end());
  std::vector<std::vector<std::optional<double>>> raw(out.zones.size(),
                                                      std::vector<std::optional<double>>(grid.count));
  for (const auto& [loop, hours] : hourly) {
    const auto z = loop_to_zone.find(loop);
    if (z == loop_to_zone.end()) throw DataError(fmt::format("loop '{}' is not mapped to a zone", loop));
    const auto zi = std::lower_bound(out.zones.begin(), out.zones.end(), z->second);
    if (zi == out.zones.end() || *zi != z->second) continue;  // zone outside the modelled set
    auto& series = raw[static_cast<std::size_t>(zi - out.zones.begin())];
    for (const auto& [h, v] : hours) {
      if (!grid.contains(h)) continue;
      auto& cell = series[grid.index(h)];
      cell = cell.value_or(0.0) + v;
    }
  }
  std::vector<std::string> empty;
  for (std::size_t z = 0; z < out.zones.size(); ++z)
    if (std::none_of(raw[z].begin(), raw[z].end(), [](const auto& v) { return v.has_value(); }))
      empty.push_back(out.zones[z]);
  if (!empty.empty()) {
    throw DataError(fmt::format("no valid loop data over the whole horizon for zone(s): {}", fmt::join(empty, ", ")));
  }
  out.flow = Tensor(grid.count, out.zones.size());
  for (std::size_t z = 0; z < out.zones.size(); ++z) {
    const auto filled = interpolate_gaps(raw[z]);
    for (std::size_t r = 0; r < grid.count; ++r) out.flow(r, z) = filled[r];
  }
  return out;
}

// --- weather --------------------------------------------------------------------

double WeatherSeries::hr_at(Hour t) const { return hr[grid.index(t)]; }
double WeatherSeries::hd_at(Hour t) const { return hd[grid.index(t)]; }
double WeatherSeries::dcr_at(Hour t) const {
  const auto it = dcr.find(date_of(t));
  if (it == dcr.end()) throw DataError(fmt::format("no daily rainfall for {}", format_date(date_of(t))));
  return it->second;
}

WeatherSeries make_weather(HourGrid grid, std::vector<double> hr, std::vector<double> hd) {
  if (hr.size() != grid.count || hd.size() != grid.count) {
    throw DataError(fmt::format("weather series length {}/{} differs from the grid ({} hours)", hr.size(), hd.size(),
                                grid.count));
  }
  WeatherSeries w;
  w.grid = grid;
  for (std::size_t i = 0; i < grid.count; ++i) {
    if (!(hr[i] >= 0.0)) throw DataError(fmt::format("negative rainfall {} at {}", hr[i], format_hour(grid.at(i))));
    if (!(hd[i] >= 0.0 && hd[i] <= 60.0)) {
      throw DataError(fmt::format("rain duration {} min outside [0, 60] at {}", hd[i], format_hour(grid.at(i))));
    }
    w.dcr[date_of(grid.at(i))] += hr[i];
  }
  w.hr = std::move(hr);
  w.hd = std::move(hd);
  return w;
}

WeatherSeries load_weather(const std::filesystem::path& path, HourGrid grid) {
  const auto t = CsvTable::read(path);
  const auto ts = t.column("ts"), hr = t.column("hr"), hd = t.column("hd");
  std::vector<std::optional<double>> hr_raw(grid.count), hd_raw(grid.count);
  for (std::size_t r = 0; r < t.rows(); ++r) {
    Hour h;
    try {
      h = parse_hour(t.cell(r, ts));
    } catch (const DataError& e) {
      throw DataError(fmt::format("{}: row {}: {}", t.source(), r + 2, e.what()));
    }
    if (!grid.contains(h)) continue;
    hr_raw[grid.index(h)] = optional_number(t, r, hr);
    hd_raw[grid.index(h)] = optional_number(t, r, hd);
  }
  try {
    return make_weather(grid, interpolate_gaps(hr_raw), interpolate_gaps(hd_raw));
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", t.source(), e.what()));
  }
}

// --- calendar ----------------------------------------------------------------------

Calendar load_calendar(const std::filesystem::path& path) {
  const auto t = CsvTable::read(path);
  const auto date = t.column("date"), bd = t.column("business_day"), sh = t.column("school_holiday"),
             dep = t.column("holiday_departure"), ret = t.column("holiday_return");
  Calendar out;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const Date d = parse_date(t.cell(r, date));
    const CalendarDay day{parse_flag(t, r, bd), parse_flag(t, r, sh), parse_flag(t, r, dep), parse_flag(t, r, ret)};
    if (!out.emplace(d, day).second) throw DataError(fmt::format("{}: duplicate date {}", t.source(), t.cell(r, date)));
  }
  return out;
}

void save_calendar(const std::filesystem::path& path, const Calendar& calendar) {
  std::ofstream out(path);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << "date,business_day,school_holiday,holiday_departure,holiday_return\n";
  for (const auto& [d, day] : calendar) {
    out << format_date(d) << ',' << int(day.business_day) << ',' << int(day.school_holiday) << ','
        << int(day.holiday_departure) << ',' << int(day.holiday_return) << '\n';
  }
}

int hour_class(int hour_of_day) { return hour_of_day >= 6 && hour_of_day <= 22 ? hour_of_day - 5 : 0; }

Tensor CalendarEncoding::one_hot(std::size_t feature) const {
  Tensor v(1, kCalendarClasses.at(feature));
  v(0, classes[feature]) = 1.0;
  return v;
}

CalendarEncoding encode_calendar(Hour t, const Calendar& calendar) {
  const Date d = date_of(t);
  const auto it = calendar.find(d);
  if (it == calendar.end()) throw DataError(fmt::format("date {} is not covered by the calendar table", format_date(d)));
  CalendarEncoding e;
  e.classes = {static_cast<std::size_t>(hour_class(hour_of_day(t))), static_cast<std::size_t>(weekday_index(d)),
               it->second.business_day, it->second.school_holiday, it->second.holiday_departure,
               it->second.holiday_return};
  return e;
}

void validate_encoding(const CalendarEncoding& encoding) {
  for (std::size_t i = 0; i < kCalendarFeatures; ++i) {
    if (encoding.classes[i] >= kCalendarClasses[i]) {
      throw DataError(fmt::format("calendar feature {} has class {} but only {} classes", i, encoding.classes[i],
                                  kCalendarClasses[i]));
    }
  }
}

// --- feature variants -----------------------------------------------------------

std::string_view signal_name(Signal s) {
  switch (s) {
    case Signal::hr: return "hr";
    case Signal::hd: return "hd";
    case Signal::dcr: return "dcr";
  }
  return "?";
}

namespace {

std::string offset_label(int offset) {
  if (offset == 0) return "t";
  return offset < 0 ? fmt::format("t{}", offset) : fmt::format("t+{}", offset);
}

const std::vector<FeatureSpec>& roster() {
  using S = Signal;
  static const std::vector<FeatureSpec> specs = {
      {"X", {}, {}, false},
      {"T", {}, {}, true},
      {"W1", {{S::hr, -1}}, {}, false},
      {"W2", {{S::hr, -2}, {S::hr, -1}}, {}, false},
      {"W3", {{S::hr, -3}, {S::hr, -2}, {S::hr, -1}}, {}, false},
      {"W4", {{S::hr, 0}}, {}, false},
      {"W5", {{S::hr, -1}, {S::hr, 0}}, {}, false},
      {"W6", {{S::hr, -1}, {S::hd, -1}}, {}, false},
      {"W7", {{S::hr, 0}, {S::hd, 0}}, {}, false},
      {"I1", {}, {-1}, false},
      {"I2", {}, {-2, -1}, false},
      {"I3", {}, {0}, false},
      {"I4", {}, {-1, 0}, false},
      {"I5", {}, {-2, -1, 0}, false},
      {"WIT", {{S::hr, -1}, {S::hr, 0}, {S::hr, 1}}, {-1, 0}, true},
  };
  return specs;
}

}  // namespace

std::vector<std::string> FeatureSpec::column_names() const {
  std::vector<std::string> out = {"Y_t-168", "Y_t-24", "Y_t-2", "Y_t-1"};
  for (const auto& w : weather_terms) out.push_back(fmt::format("{}_{}", signal_name(w.signal), offset_label(w.offset)));
  for (int o : flow_terms) out.push_back(fmt::format("I_{}", offset_label(o)));
  return out;
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& s : roster()) n.push_back(s.variant);
    return n;
  }();
  return names;
}

FeatureSpec feature_spec(std::string_view variant) {
  for (const auto& s : roster())
    if (s.variant == variant) return s;
  throw std::invalid_argument(
      fmt::format("unknown variant '{}'; valid variants: {}", variant, fmt::join(variant_names(), ", ")));
}

std::pair<Hour, Hour> feature_range(const FeatureSpec& spec, const HourGrid& panel_grid) {
  int lo = kLagOffsets.front(), hi = 0;
  for (const auto& w : spec.weather_terms) hi = std::max(hi, w.offset), lo = std::min(lo, w.offset);
  for (int o : spec.flow_terms) hi = std::max(hi, o), lo = std::min(lo, o);
  const Hour first = panel_grid.start - lo;
  const Hour end = panel_grid.end() - hi;
  return {first, std::max(first, end)};
}

FeatureMatrix assemble_features(const FeatureSpec& spec, const ODDemandPanel& panel, const WeatherSeries* weather,
                                const ZoneFlowSeries* flows, Hour t) {
  if (spec.uses_weather() && !weather) throw DataError(fmt::format("variant {} needs weather data", spec.variant));
  if (spec.uses_flow() && !flows) throw DataError(fmt::format("variant {} needs car flow data", spec.variant));
  const Tensor lags = build_lags(panel, t);
  const std::size_t n = panel.size();
  Tensor x(n, spec.width());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < lags.cols(); ++c) x(r, c) = lags(r, c);
  std::size_t col = lags.cols();
  for (const auto& term : spec.weather_terms) {
    const Hour at = t + term.offset;
    if (!weather->grid.contains(at)) {
      throw DataError(fmt::format("missing {} at {} (offset {:+d} from {})", signal_name(term.signal), format_hour(at),
                                  term.offset, format_hour(t)));
    }
    double v = 0.0;
    switch (term.signal) {
      case Signal::hr: v = weather->hr_at(at); break;
      case Signal::hd: v = weather->hd_at(at); break;
      case Signal::dcr: v = weather->dcr_at(at); break;
    }
    for (std::size_t r = 0; r < n; ++r) x(r, col) = v;
    ++col;
  }
  if (spec.uses_flow()) {
    std::vector<std::size_t> zone(n);
    for (std::size_t r = 0; r < n; ++r) zone[r] = flows->zone_index(panel.od_pairs[r].origin);
    for (int offset : spec.flow_terms) {
      const Hour at = t + offset;
      if (!flows->grid.contains(at)) {
        throw DataError(fmt::format("missing I at {} (offset {:+d} from {})", format_hour(at), offset, format_hour(t)));
      }
      const std::size_t row = flows->grid.index(at);
      for (std::size_t r = 0; r < n; ++r) x(r, col) = flows->flow(row, zone[r]);
      ++col;
    }
  }
  return FeatureMatrix{t, std::move(x)};
}

std::vector<FeatureMatrix> assemble_all(const FeatureSpec& spec, const ODDemandPanel& panel,
                                        const WeatherSeries* weather, const ZoneFlowSeries* flows,
                                        const std::vector<Hour>& hours) {
  std::vector<FeatureMatrix> out(hours.size());
  std::vector<std::exception_ptr> errors(hours.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(hours.size()); ++i) {
    try {
      out[i] = assemble_features(spec, panel, weather, flows, hours[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

Standardizer Standardizer::fit(const std::vector<FeatureMatrix>& train) {
  if (train.empty()) throw DataError("cannot fit feature scaling on an empty training set");
  const std::size_t l = train.front().x.cols();
  Standardizer s;
  s.mean.assign(l, 0.0);
  s.scale.assign(l, 1.0);
  std::vector<double> sq(l, 0.0);
  double count = 0.0;
  for (const auto& m : train) {
    if (m.x.cols() != l) throw ShapeError("feature matrices have differing widths");
    for (std::size_t r = 0; r < m.x.rows(); ++r)
      for (std::size_t c = 0; c < l; ++c) s.mean[c] += m.x(r, c);
    count += static_cast<double>(m.x.rows());
  }
  for (auto& v : s.mean) v /= count;
  for (const auto& m : train)
    for (std::size_t r = 0; r < m.x.rows(); ++r)
      for (std::size_t c = 0; c < l; ++c) {
        const double d = m.x(r, c) - s.mean[c];
        sq[c] += d * d;
      }
  for (std::size_t c = 0; c < l; ++c) {
    const double sd = std::sqrt(sq[c] / count);
    if (sd > 1e-12) s.scale[c] = sd;
  }
  return s;
}

Tensor Standardizer::apply(const Tensor& x) const {
  if (x.cols() != mean.size()) {
    throw ShapeError(fmt::format("feature scaling expects {} columns, got {}", mean.size(), shape_string(x)));
  }
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean[c]) / scale[c];
  return out;
}

}  // namespace bikeod::features
