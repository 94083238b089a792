#include "bikeod/synth.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "bikeod/csv.hpp"
#include "bikeod/error.hpp"
#include "json.hpp"

namespace bikeod::synth {

namespace {

struct Masses {
  double out;
  double in;
};

Masses masses(Archetype a) {
  switch (a) {
    case Archetype::Residential: return {1.5, 0.7};
    case Archetype::Business: return {0.7, 1.6};
    case Archetype::Campus: return {1.0, 1.2};
  }
  return {1.0, 1.0};
}

double flow_factor(Archetype a) {
  switch (a) {
    case Archetype::Residential: return 0.8;
    case Archetype::Business: return 1.4;
    case Archetype::Campus: return 1.0;
  }
  return 1.0;
}

std::string zone_id(std::size_t i) { return fmt::format("z{:03d}", i); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << text;
}

}  // namespace

std::string_view archetype_name(Archetype a) {
  switch (a) {
    case Archetype::Residential: return "residential";
    case Archetype::Business: return "business";
    case Archetype::Campus: return "campus";
  }
  return "?";
}

std::vector<double> archetype_vector(Archetype a) {
  // housing, offices, education, leisure, retail
  switch (a) {
    case Archetype::Residential: return {0.8, 0.1, 0.05, 0.3, 0.2};
    case Archetype::Business: return {0.1, 0.9, 0.05, 0.1, 0.4};
    case Archetype::Campus: return {0.2, 0.2, 0.9, 0.3, 0.1};
  }
  return {};
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
  if (grid < 2) fail("grid must be >= 2");
  if (!(cell_size > 0)) fail("cell_size must be > 0");
  if (stations_per_zone == 0) fail("stations_per_zone must be >= 1");
  if (days == 0) fail("days must be >= 1");
  (void)parse_date(start_date);
  if (!(gravity_exponent >= 0)) fail("gravity_exponent must be >= 0");
  if (!(trips_per_hour >= 0)) fail("trips_per_hour must be >= 0");
  for (double v : weekday_profile)
    if (!(v >= 0)) fail("weekday_profile entries must be >= 0");
  for (double v : weekend_profile)
    if (!(v >= 0)) fail("weekend_profile entries must be >= 0");
  if (!(holiday_damping >= 0)) fail("holiday_damping must be >= 0");
  if (!(rain.episodes_per_day >= 0)) fail("rain.episodes_per_day must be >= 0");
  if (!(rain.mean_duration_hours >= 1)) fail("rain.mean_duration_hours must be >= 1");
  if (!(rain.mean_intensity > 0)) fail("rain.mean_intensity must be > 0");
  if (!(beta >= 0)) fail("beta must be >= 0");
  if (!(recovery_share >= 0)) fail("recovery_share must be >= 0");
  if (!(substitution >= 0)) fail("substitution must be >= 0");
  if (loops_per_zone == 0) fail("loops_per_zone must be >= 1");
  if (!(flow_per_loop >= 0)) fail("flow_per_loop must be >= 0");
  if (!(flow_noise >= 0)) fail("flow_noise must be >= 0");
  if (!(corrupt_fraction >= 0 && corrupt_fraction <= 1)) fail("corrupt_fraction must be in [0, 1]");
}

HourGrid SynthConfig::grid_hours() const { return {start_of(parse_date(start_date)), days * 24}; }

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  // splitmix64 finalizer over the mixed inputs
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1) + 0xbf58476d1ce4e5b9ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t sample_poisson(double lambda, Rng& rng) {
  if (!(lambda > 0.0)) return 0;
  std::poisson_distribution<std::uint64_t> dist(lambda);
  return dist(rng);
}

// --- city ---------------------------------------------------------------------------------

City generate_city(const SynthConfig& config) {
  config.validate();
  const std::size_t g = config.grid, nz = g * g;
  const double s = config.cell_size;
  Rng rng(derive_seed(config.seed, 1, 0));

  std::vector<Archetype> kinds(nz, Archetype::Residential);
  std::vector<std::size_t> order(nz);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_business = std::max<std::size_t>(1, nz / 5);
  const std::size_t n_campus = std::max<std::size_t>(1, nz / 10);
  for (std::size_t k = 0; k < n_business; ++k) kinds[order[k]] = Archetype::Business;
  for (std::size_t k = n_business; k < n_business + n_campus && k < nz; ++k) kinds[order[k]] = Archetype::Campus;

  City city;
  std::vector<geo::Zone> zones;
  for (std::size_t r = 0; r < g; ++r) {
    for (std::size_t c = 0; c < g; ++c) {
      const std::size_t i = r * g + c;
      const double x0 = c * s, y0 = r * s;
      geo::Zone z;
      z.id = zone_id(i);
      z.polygons.push_back({{{x0, y0}, {x0 + s, y0}, {x0 + s, y0 + s}, {x0, y0 + s}, {x0, y0}}, {}});
      z.functionality = archetype_vector(kinds[i]);
      for (double& v : z.functionality) v = std::max(0.0, v + 0.1 * (uniform01(rng) - 0.5));
      z.members = {z.id};
      city.archetypes[z.id] = kinds[i];
      for (std::size_t k = 0; k < config.stations_per_zone; ++k) {
        const geo::Point p{x0 + s * (0.05 + 0.9 * uniform01(rng)), y0 + s * (0.05 + 0.9 * uniform01(rng))};
        city.stations.push_back({fmt::format("s{:03d}_{}", i, k), p, z.id});
      }
      for (std::size_t k = 0; k < config.loops_per_zone; ++k) city.loops[fmt::format("L{:03d}_{}", i, k)] = z.id;
      zones.push_back(std::move(z));
    }
  }
  city.partition = geo::ZonePartition(std::move(zones));

  const Date first = parse_date(config.start_date);
  for (std::size_t d = 0; d < config.days; ++d) {
    const Date day = first + std::chrono::days(d);
    features::CalendarDay cd;
    cd.business_day = weekday_index(day) < 5;
    const bool holiday = config.holiday_days > 0 && d >= config.holiday_start_day &&
                         d < config.holiday_start_day + config.holiday_days;
    cd.school_holiday = holiday;
    cd.holiday_departure = holiday && d == config.holiday_start_day;
    cd.holiday_return = holiday && d + 1 == config.holiday_start_day + config.holiday_days;
    city.calendar[day] = cd;
  }
  return city;
}

// --- weather -----------------------------------------------------------------------------

SynthWeather generate_weather(const SynthConfig& config) {
  config.validate();
  const HourGrid grid = config.grid_hours();
  Rng rng(derive_seed(config.seed, 2, 0));
  std::vector<double> hr(grid.count, 0.0), hd(grid.count, 0.0);
  SynthWeather out;
  const double rate_per_hour = config.rain.episodes_per_day / 24.0;
  if (rate_per_hour > 0.0) {
    std::exponential_distribution<double> gap(rate_per_hour);
    const double p_stop = 1.0 / config.rain.mean_duration_hours;
    double clock = gap(rng);
    while (clock < static_cast<double>(grid.count)) {
      const auto start = static_cast<std::size_t>(clock);
      std::size_t len = 1;
      while (uniform01(rng) >= p_stop) ++len;
      for (std::size_t k = 0; k < len && start + k < grid.count; ++k) {
        const std::size_t i = start + k;
        const double intensity = config.rain.mean_intensity * -std::log(1.0 - uniform01(rng));
        hr[i] = std::max(hr[i], std::max(0.1, std::round(intensity * 10.0) / 10.0));
        const bool edge = k == 0 || k + 1 == len;
        const double minutes = edge ? std::ceil(60.0 * (1.0 - uniform01(rng))) : 60.0;
        hd[i] = std::max(hd[i], std::clamp(minutes, 1.0, 60.0));
      }
      out.episodes.push_back({grid.at(start), len});
      clock += gap(rng);
    }
  }
  out.series = features::make_weather(grid, std::move(hr), std::move(hd));
  return out;
}

// --- demand ------------------------------------------------------------------------------

std::vector<double> gravity_shares(const SynthConfig& config, const City& city) {
  const auto pairs = features::all_od_pairs(city.partition);
  std::vector<double> w(pairs.size());
  double total = 0.0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& o = city.partition.zone(city.partition.index_of(pairs[k].origin));
    const auto& d = city.partition.zone(city.partition.index_of(pairs[k].destination));
    const double dist = std::hypot(o.centroid.x - d.centroid.x, o.centroid.y - d.centroid.y) / config.cell_size;
    w[k] = masses(city.archetypes.at(o.id)).out * masses(city.archetypes.at(d.id)).in /
           std::pow(dist, config.gravity_exponent);
    total += w[k];
  }
  for (double& v : w) v /= total;
  return w;
}

SynthDemand generate_demand(const SynthConfig& config, const City& city, const features::WeatherSeries& weather) {
  config.validate();
  const HourGrid grid = config.grid_hours();
  if (weather.grid.start != grid.start || weather.grid.count != grid.count)
    throw DataError("synthetic weather does not match the configured horizon");
  const auto shares = gravity_shares(config, city);
  const std::size_t n = shares.size(), t_count = grid.count;

  SynthDemand out;
  out.counts.od_pairs = features::all_od_pairs(city.partition);
  out.counts.grid = grid;
  out.counts.demand = Tensor(t_count, n);
  out.base_rate = Tensor(t_count, n);
  out.rate = Tensor(t_count, n);
  out.truth.resize(t_count);

  // city-level multipliers first; every OD shares them
  std::vector<double> cal(t_count), rain(t_count), rec(t_count, 0.0);
  for (std::size_t i = 0; i < t_count; ++i) {
    const Hour t = grid.at(i);
    const auto& day = city.calendar.at(date_of(t));
    const auto& profile = weekday_index(date_of(t)) < 5 ? config.weekday_profile : config.weekend_profile;
    cal[i] = profile[hour_of_day(t)] * (day.school_holiday ? config.holiday_damping : 1.0);
    rain[i] = std::exp(-config.beta * weather.hr[i]);
    if (i > 0 && weather.hr[i] == 0.0 && weather.hr[i - 1] > 0.0)
      rec[i] = config.recovery_share * cal[i - 1] * (1.0 - rain[i - 1]);
  }

  const auto days = static_cast<std::int64_t>(config.days);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t d = 0; d < days; ++d) {
    Rng rng(derive_seed(config.seed, 3, static_cast<std::uint64_t>(d)));
    for (std::size_t h = 0; h < 24; ++h) {
      const std::size_t i = static_cast<std::size_t>(d) * 24 + h;
      HourTruth& truth = out.truth[i];
      truth.t = grid.at(i);
      truth.calendar_factor = cal[i];
      truth.rain_factor = rain[i];
      truth.recovery = rec[i];
      for (std::size_t k = 0; k < n; ++k) {
        const double scale = config.trips_per_hour * shares[k];
        const double base = scale * cal[i];
        const double lambda = base * rain[i] + scale * rec[i];
        out.base_rate(i, k) = base;
        out.rate(i, k) = lambda;
        const auto c = sample_poisson(lambda, rng);
        out.counts.demand(i, k) = static_cast<double>(c);
        truth.expected_trips += lambda;
        truth.trips += c;
        truth.zero_ods += c == 0;
      }
    }
  }
  return out;
}

std::vector<features::Trip> expand_trips(const SynthConfig& config, const City& city, const ODDemandPanel& counts) {
  std::map<std::string, std::vector<std::string>> by_zone;
  for (const auto& s : city.stations) by_zone[s.zone_id].push_back(s.id);
  const std::size_t t_count = counts.grid.count;
  const std::size_t days = (t_count + 23) / 24;
  std::vector<std::vector<features::Trip>> parts(days);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t d = 0; d < static_cast<std::int64_t>(days); ++d) {
    Rng rng(derive_seed(config.seed, 5, static_cast<std::uint64_t>(d)));
    auto& part = parts[d];
    const auto day = static_cast<std::size_t>(d);
    for (std::size_t i = day * 24; i < std::min(t_count, (day + 1) * 24); ++i) {
      for (std::size_t k = 0; k < counts.size(); ++k) {
        const auto c = static_cast<std::size_t>(counts.demand(i, k));
        const auto& from = by_zone.at(counts.od_pairs[k].origin);
        const auto& to = by_zone.at(counts.od_pairs[k].destination);
        for (std::size_t j = 0; j < c; ++j) {
          const auto pick = [&](const std::vector<std::string>& v) {
            return v[static_cast<std::size_t>(uniform01(rng) * v.size())];
          };
          features::Trip trip{counts.grid.at(i), pick(from), pick(to)};
          part.push_back(std::move(trip));
        }
      }
    }
  }
  std::vector<features::Trip> out;
  for (auto& p : parts) std::move(p.begin(), p.end(), std::back_inserter(out));
  return out;
}

// --- car flow ----------------------------------------------------------------------------

SynthFlow generate_flow(const SynthConfig& config, const City& city, const SynthDemand& demand) {
  const HourGrid grid = demand.counts.grid;
  const auto& zones = city.partition.zones();
  const std::size_t nz = zones.size(), t_count = grid.count;
  std::vector<std::vector<std::string>> zone_loops(nz);
  for (const auto& [loop, zone] : city.loops) zone_loops[city.partition.index_of(zone)].push_back(loop);

  // suppressed bike trips leaving each zone (expected values)
  Tensor suppressed(t_count, nz);
  for (std::size_t k = 0; k < demand.counts.size(); ++k) {
    const std::size_t z = city.partition.index_of(demand.counts.od_pairs[k].origin);
    for (std::size_t i = 0; i < t_count; ++i)
      suppressed(i, z) += std::max(0.0, demand.base_rate(i, k) - demand.rate(i, k));
  }

  SynthFlow out;
  out.zone_flow = Tensor(t_count, nz);
  const std::size_t days = (t_count + 23) / 24;
  std::vector<std::vector<features::LoopRecord>> parts(days);
  std::vector<std::size_t> corrupted(days, 0);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t d = 0; d < static_cast<std::int64_t>(days); ++d) {
    Rng rng(derive_seed(config.seed, 4, static_cast<std::uint64_t>(d)));
    std::normal_distribution<double> noise(0.0, 1.0);
    const auto day = static_cast<std::size_t>(d);
    for (std::size_t i = day * 24; i < std::min(t_count, (day + 1) * 24); ++i) {
      const Hour t = grid.at(i);
      const auto& profile = weekday_index(date_of(t)) < 5 ? config.weekday_profile : config.weekend_profile;
      for (std::size_t z = 0; z < nz; ++z) {
        const double base = config.flow_per_loop * static_cast<double>(zone_loops[z].size()) *
                            flow_factor(city.archetypes.at(zones[z].id)) * profile[hour_of_day(t)];
        double flow = base + config.substitution * suppressed(i, z);
        if (config.flow_noise > 0.0) flow *= std::max(0.0, 1.0 + config.flow_noise * noise(rng));
        out.zone_flow(i, z) = flow;
        const double per_period = flow / static_cast<double>(zone_loops[z].size()) / 10.0;
        for (const auto& loop : zone_loops[z]) {
          for (int p = 0; p < 10; ++p) {
            features::LoopRecord r;
            r.minute = t.value * 60 + p * 6;
            r.loop_id = loop;
            r.flow = per_period;
            r.occupancy = std::min(45.0, 2.0 + 0.5 * per_period);
            if (config.corrupt_fraction > 0.0 && uniform01(rng) < config.corrupt_fraction) {
              if (uniform01(rng) < 0.5) {
                r.occupancy = 50.0 + std::ceil(45.0 * (1.0 - uniform01(rng)));
              } else {
                r.flow.reset();
              }
              ++corrupted[d];
            }
            parts[d].push_back(std::move(r));
          }
        }
      }
    }
  }
  for (std::size_t d = 0; d < days; ++d) {
    std::move(parts[d].begin(), parts[d].end(), std::back_inserter(out.records));
    out.corrupted += corrupted[d];
  }
  return out;
}

SynthData generate_all(const SynthConfig& config) {
  SynthData data;
  data.city = generate_city(config);
  data.weather = generate_weather(config);
  data.demand = generate_demand(config, data.city, data.weather.series);
  data.flow = generate_flow(config, data.city, data.demand);
  return data;
}

// --- files --------------------------------------------------------------------------------

std::string ground_truth_json(const SynthConfig& config, const SynthData& data) {
  using nlohmann::json;
  json arche = json::object();
  for (const auto& [z, a] : data.city.archetypes) arche[z] = archetype_name(a);
  json episodes = json::array();
  for (const auto& e : data.weather.episodes) episodes.push_back({{"start", format_hour(e.start)}, {"hours", e.hours}});
  json hours = json::array();
  for (const auto& h : data.demand.truth) {
    hours.push_back({{"ts", format_hour(h.t)},
                     {"hr", data.weather.series.hr_at(h.t)},
                     {"calendar_factor", h.calendar_factor},
                     {"rain_factor", h.rain_factor},
                     {"recovery", h.recovery},
                     {"expected_trips", h.expected_trips},
                     {"trips", h.trips},
                     {"zero_ods", h.zero_ods}});
  }
  json doc = {{"seed", config.seed},
              {"beta", config.beta},
              {"recovery_share", config.recovery_share},
              {"substitution", config.substitution},
              {"od_pairs", data.demand.counts.size()},
              {"archetypes", arche},
              {"rain_episodes", episodes},
              {"corrupted_periods", data.flow.corrupted},
              {"hours", hours}};
  return doc.dump(1) + "\n";
}

std::vector<std::filesystem::path> write_dataset(const std::filesystem::path& dir, const SynthConfig& config,
                                                 const SynthData& data) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    written.push_back(dir / name);
  };

  emit("zones.geojson", geo::partition_to_geojson(data.city.partition));

  std::string s = "station_id,x,y\n";
  for (const auto& st : data.city.stations)
    s += fmt::format("{},{},{}\n", st.id, format_number(st.location.x), format_number(st.location.y));
  emit("stations.csv", s);

  features::save_calendar(dir / "calendar.csv", data.city.calendar);
  written.push_back(dir / "calendar.csv");

  const auto& w = data.weather.series;
  s = "ts,hr,hd\n";
  for (std::size_t i = 0; i < w.grid.count; ++i)
    s += fmt::format("{},{},{}\n", format_hour(w.grid.at(i)), format_number(w.hr[i]), format_number(w.hd[i]));
  emit("weather.csv", s);

  {
    const auto trips = expand_trips(config, data.city, data.demand.counts);
    std::string t = "departure_ts,origin_station,dest_station\n";
    t.reserve(trips.size() * 40);
    for (const auto& trip : trips) t += fmt::format("{},{},{}\n", format_hour(trip.departure), trip.origin_station,
                                                    trip.dest_station);
    emit("trips.csv", t);
  }

  {
    std::string l = "ts,loop_id,flow,occupancy\n";
    l.reserve(data.flow.records.size() * 48);
    for (const auto& r : data.flow.records) {
      const std::int64_t hour = r.minute >= 0 ? r.minute / 60 : -((-r.minute + 59) / 60);
      const std::string ts = fmt::format("{}T{:02d}:{:02d}", format_date(date_of(Hour{hour})),
                                         hour_of_day(Hour{hour}), static_cast<int>(r.minute - hour * 60));
      l += fmt::format("{},{},{},{}\n", ts, r.loop_id, r.flow ? format_number(*r.flow) : "",
                       r.occupancy ? format_number(*r.occupancy) : "");
    }
    emit("loops.csv", l);
  }

  s = "loop_id,zone_id\n";
  for (const auto& [loop, zone] : data.city.loops) s += fmt::format("{},{}\n", loop, zone);
  emit("loop_zones.csv", s);

  emit("ground_truth.json", ground_truth_json(config, data));
  return written;
}

}  // namespace bikeod::synth
