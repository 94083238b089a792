#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "bikeod/features.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace bikeod;
using namespace bikeod::features;
using bikeod::testing::unit_grid;

namespace {

const Hour kStart = parse_hour("2024-03-04T00:00");  // a Monday

ODDemandPanel random_panel(std::size_t hours, std::size_t n, Rng& rng) {
  ODDemandPanel p;
  for (std::size_t i = 0; i < n; ++i) p.od_pairs.push_back({i, fmt::format("o{}", i), fmt::format("d{}", i)});
  p.grid = HourGrid{kStart, hours};
  p.demand = Tensor(hours, n);
  for (double& v : p.demand.data()) v = static_cast<double>(rng() % 9);
  return p;
}

LoopRecord rec(Hour h, int period, std::string loop, std::optional<double> flow, std::optional<double> occ) {
  return LoopRecord{h.value * 60 + period * 6, std::move(loop), flow, occ};
}

std::filesystem::path write_tmp(const std::string& name, const std::string& text) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << text;
  return path;
}

}  // namespace

TEST_CASE("trips_to_panel counts departures per hour and OD") {
  const auto part = unit_grid(2, 2);  // z00 z01 / z02 z03
  std::vector<geo::Station> stations{{"A", {0.5, 0.5}, {}}, {"B", {1.5, 0.5}, {}}, {"C", {0.2, 0.3}, {}},
                                     {"D", {1.5, 1.5}, {}}};
  const HourGrid grid{kStart, 48};
  std::vector<Trip> one{{parse_hour("2024-03-04T08:14"), "A", "B"}};
  const auto panel = trips_to_panel(one, stations, part, grid);
  CHECK(panel.size() == 12);
  const auto od = std::find_if(panel.od_pairs.begin(), panel.od_pairs.end(),
                               [](const ODPair& p) { return p.origin == "z00" && p.destination == "z01"; });
  REQUIRE(od != panel.od_pairs.end());
  CHECK(panel.at(kStart + 8, od->index) == 1.0);
  CHECK(panel.total() == 1.0);

  std::vector<Trip> intra{{kStart + 3, "A", "C"}};
  CHECK(trips_to_panel(intra, stations, part, grid).total() == 0.0);

  // 1000 random trips against an independent group-by recount
  Rng rng(8);
  std::vector<Trip> trips;
  std::map<std::tuple<std::int64_t, std::string, std::string>, int> oracle;
  std::map<std::string, std::string> zone{{"A", "z00"}, {"B", "z01"}, {"C", "z00"}, {"D", "z03"}};
  const char* ids[] = {"A", "B", "C", "D"};
  int intra_count = 0;
  for (int k = 0; k < 1000; ++k) {
    Trip t{kStart + static_cast<std::int64_t>(rng() % 48), ids[rng() % 4], ids[rng() % 4]};
    trips.push_back(t);
    if (zone[t.origin_station] == zone[t.dest_station]) {
      ++intra_count;
      continue;
    }
    ++oracle[{t.departure.value, zone[t.origin_station], zone[t.dest_station]}];
  }
  const auto big = trips_to_panel(trips, stations, part, grid);
  CHECK(big.total() == 1000.0 - intra_count);
  for (const auto& [key, count] : oracle) {
    const auto& [h, o, d] = key;
    const auto p = std::find_if(big.od_pairs.begin(), big.od_pairs.end(),
                                [&](const ODPair& x) { return x.origin == o && x.destination == d; });
    CHECK(big.at(Hour{h}, p->index) == count);
  }

  std::vector<Trip> bad_station{{kStart, "A", "Q"}};
  CHECK_THROWS_AS(trips_to_panel(bad_station, stations, part, grid), DataError);
  std::vector<Trip> late{{kStart + 48, "A", "B"}};
  CHECK_THROWS_AS(trips_to_panel(late, stations, part, grid), DataError);
}

TEST_CASE("filter_top_ods keeps the minimal highest-demand prefix") {
  ODDemandPanel p;
  p.od_pairs = {{0, "a", "b"}, {1, "b", "a"}, {2, "a", "c"}, {3, "c", "a"}};
  p.grid = HourGrid{kStart, 24};
  p.demand = Tensor(24, 4);
  p.demand(8, 0) = 60;
  p.demand(9, 1) = 30;
  p.demand(10, 2) = 10;
  p.demand(3, 3) = 500;  // outside the 7-21 window
  const auto top = filter_top_ods(p, 0.6);
  REQUIRE(top.size() == 1);
  CHECK(top[0].index == 0);
  const auto all = filter_top_ods(p, 1.0);
  REQUIRE(all.size() == 3);
  CHECK(all[2].index == 2);
  CHECK(filter_top_ods(p, 0.61).size() == 2);
  CHECK_THROWS_AS(filter_top_ods(p, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(filter_top_ods(ODDemandPanel{p.od_pairs, p.grid, Tensor(24, 4)}, 0.5), DataError);

  // minimality on a random panel
  Rng rng(4);
  const auto r = random_panel(24 * 7, 40, rng);
  for (double share : {0.2, 0.5, 0.6, 0.9}) {
    const auto keep = filter_top_ods(r, share);
    std::vector<double> tot(40, 0.0);
    double sum = 0.0;
    for (std::size_t h = 0; h < r.grid.count; ++h) {
      const int hod = hour_of_day(r.grid.at(h));
      if (hod < 7 || hod >= 21) continue;
      for (std::size_t c = 0; c < 40; ++c) tot[c] += r.demand(h, c), sum += r.demand(h, c);
    }
    double kept = 0.0, smallest = 1e300;
    for (const auto& od : keep) kept += tot[od.index], smallest = std::min(smallest, tot[od.index]);
    CHECK(kept >= share * sum);
    CHECK(kept - smallest < share * sum);
    // nothing dropped is larger than anything kept
    for (std::size_t c = 0; c < 40; ++c) {
      const bool in = std::any_of(keep.begin(), keep.end(), [&](const ODPair& od) { return od.index == c; });
      if (!in) CHECK(tot[c] <= smallest);
    }
  }
  const auto sub = restrict_panel(r, filter_top_ods(r, 0.5));
  CHECK(sub.od_pairs.front().index == 0);
}

TEST_CASE("lags use offsets -168, -24, -2, -1") {
  ODDemandPanel c;
  c.od_pairs = {{0, "a", "b"}, {1, "b", "a"}};
  c.grid = HourGrid{kStart, 200};
  c.demand = Tensor(200, 2);
  c.demand.fill(3.0);
  const auto l = build_lags(c, kStart + 170);
  for (double v : l.data()) CHECK(v == 3.0);

  c.demand.fill(0.0);
  const Hour t = kStart + 190;
  c.demand(c.grid.index(t - 24), 1) = 1.0;
  const auto imp = build_lags(c, t);
  CHECK(imp(1, 1) == 1.0);
  CHECK(imp(1, 0) == 0.0);
  CHECK(imp(1, 2) == 0.0);
  CHECK(imp(1, 3) == 0.0);
  CHECK(imp(0, 1) == 0.0);

  Rng rng(12);
  const auto r = random_panel(400, 6, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t ti = 168 + rng() % 200;
    const auto m = build_lags(r, r.grid.at(ti));
    for (std::size_t od = 0; od < 6; ++od) {
      CHECK(m(od, 0) == r.demand(ti - 168, od));
      CHECK(m(od, 1) == r.demand(ti - 24, od));
      CHECK(m(od, 2) == r.demand(ti - 2, od));
      CHECK(m(od, 3) == r.demand(ti - 1, od));
    }
  }
  CHECK_THROWS_WITH_AS(build_lags(r, kStart + 100), doctest::Contains("2024-03-11T00:00"), DataError);
}

TEST_CASE("loop cleaning: validity, 5-period rule, scaling") {
  const Hour h = kStart + 8;
  std::vector<LoopRecord> recs;
  for (int p = 0; p < 10; ++p) recs.push_back(rec(h, p, "L1", 6.0, 10.0));  // complete hour
  for (int p = 0; p < 5; ++p) recs.push_back(rec(h, p, "L2", 10.0, 20.0));  // 5 valid, total 50
  for (int p = 5; p < 10; ++p) recs.push_back(rec(h, p, "L2", 10.0, 60.0));  // occupancy > 50 %
  for (int p = 0; p < 4; ++p) recs.push_back(rec(h, p, "L3", 10.0, 5.0));  // only 4 valid
  for (int p = 4; p < 10; ++p) recs.push_back(rec(h, p, "L3", std::nullopt, 5.0));
  recs.push_back(rec(h, 0, "L4", 7.0, 50.0));  // exactly 50 % is valid
  for (int p = 1; p < 5; ++p) recs.push_back(rec(h, p, "L4", 7.0, 1.0));
  const auto out = clean_loop_data(recs);
  CHECK(out.at("L1").at(h) == 60.0);
  CHECK(out.at("L2").at(h) == 100.0);
  CHECK(out.at("L3").count(h) == 0);
  CHECK(out.at("L4").at(h) == 70.0);
}

TEST_CASE("zone flow aggregation and interpolation") {
  const HourGrid grid{kStart, 5};
  LoopHourly hourly;
  hourly["a1"][kStart + 1] = 30.0;
  hourly["a2"][kStart + 1] = 50.0;
  hourly["a1"][kStart + 3] = 100.0;  // zone A: _, 80, _, 100, _
  hourly["b1"][kStart + 2] = 70.0;   // zone B: leading and trailing gaps
  std::map<std::string, std::string> map{{"a1", "A"}, {"a2", "A"}, {"b1", "B"}};
  const auto f = aggregate_flow_by_zone(hourly, map, {"A", "B"}, grid);
  CHECK(f.at("A", kStart + 1) == 80.0);
  CHECK(f.at("A", kStart + 2) == 90.0);
  CHECK(f.at("A", kStart + 0) == 80.0);
  CHECK(f.at("A", kStart + 4) == 100.0);
  for (int k = 0; k < 5; ++k) CHECK(f.at("B", kStart + k) == 70.0);

  CHECK(interpolate_gaps({100.0, std::nullopt, 200.0})[1] == 150.0);
  CHECK(interpolate_gaps({std::nullopt, 70.0})[0] == 70.0);

  CHECK_THROWS_WITH_AS(aggregate_flow_by_zone(hourly, map, {"A", "B", "C"}, grid), doctest::Contains("C"), DataError);
  std::map<std::string, std::string> partial{{"a1", "A"}};
  CHECK_THROWS_AS(aggregate_flow_by_zone(hourly, partial, {"A"}, grid), DataError);
}

TEST_CASE("planted 4-valid-period hour is dropped then interpolated") {
  std::vector<LoopRecord> recs;
  for (int h = 0; h < 3; ++h)
    for (int p = 0; p < 10; ++p) recs.push_back(rec(kStart + h, p, "L", h == 1 && p >= 4 ? 999.0 : 10.0 * (h + 1),
                                                     h == 1 && p >= 4 ? 80.0 : 5.0));
  const auto clean = clean_loop_data(recs);
  CHECK(clean.at("L").count(kStart + 1) == 0);
  const auto f = aggregate_flow_by_zone(clean, {{"L", "Z"}}, {"Z"}, HourGrid{kStart, 3});
  CHECK(f.at("Z", kStart + 0) == 100.0);
  CHECK(f.at("Z", kStart + 1) == 200.0);
  CHECK(f.at("Z", kStart + 2) == 300.0);
}

TEST_CASE("weather: dcr is the daily sum of hr") {
  const HourGrid grid{kStart, 72};
  Rng rng(1);
  std::vector<double> hr(72), hd(72);
  for (std::size_t i = 0; i < 72; ++i) {
    hr[i] = rng() % 3 == 0 ? 0.1 * static_cast<double>(rng() % 50) : 0.0;
    hd[i] = hr[i] > 0 ? static_cast<double>(1 + rng() % 60) : 0.0;
  }
  const auto w = make_weather(grid, hr, hd);
  for (int d = 0; d < 3; ++d) {
    double s = 0.0;
    for (int h = 0; h < 24; ++h) s += hr[d * 24 + h];
    CHECK(w.dcr_at(kStart + d * 24 + 5) == s);
  }
  hd[3] = 61;
  CHECK_THROWS_AS(make_weather(grid, hr, hd), DataError);
  hd[3] = 0;
  hr[3] = -1;
  CHECK_THROWS_AS(make_weather(grid, hr, hd), DataError);

  const auto path = write_tmp("bikeod_weather.csv",
                              "ts,hr,hd\n2024-03-04T00:00,0,0\n2024-03-04T01:00,,\n2024-03-04T02:00,2,30\n");
  const auto loaded = load_weather(path, HourGrid{kStart, 4});
  CHECK(loaded.hr == std::vector<double>{0, 1, 2, 2});
  CHECK(loaded.hd == std::vector<double>{0, 15, 30, 30});
  std::filesystem::remove(path);
}

TEST_CASE("calendar encoding") {
  CHECK(hour_class(6) == 1);
  CHECK(hour_class(22) == 17);
  CHECK(hour_class(3) == 0);
  CHECK(hour_class(23) == 0);
  CHECK(hour_class(5) == 0);

  Calendar cal;
  cal[date_of(kStart)] = CalendarDay{true, false, true, false};
  const auto e = encode_calendar(kStart + 9, cal);
  CHECK(e.classes[0] == 4);
  CHECK(e.classes[1] == 0);  // Monday
  CHECK(e.classes[2] == 1);
  CHECK(e.classes[4] == 1);
  for (std::size_t f = 0; f < kCalendarFeatures; ++f) {
    const auto v = e.one_hot(f);
    CHECK(v.cols() == kCalendarClasses[f]);
    double s = 0.0;
    for (double x : v.data()) s += x;
    CHECK(s == 1.0);
  }
  CHECK_THROWS_AS(encode_calendar(kStart + 30, cal), DataError);
  CalendarEncoding bad;
  bad.classes[0] = 18;
  CHECK_THROWS_AS(validate_encoding(bad), DataError);

  const auto path = std::filesystem::temp_directory_path() / "bikeod_calendar.csv";
  save_calendar(path, cal);
  CHECK(load_calendar(path).at(date_of(kStart)).holiday_departure);
  std::filesystem::remove(path);
}

TEST_CASE("variant roster and feature assembly") {
  CHECK(variant_names().size() == 15);
  CHECK(feature_spec("X").width() == 4);
  CHECK(feature_spec("WIT").width() == 9);
  CHECK(feature_spec("WIT").embedding);
  CHECK(feature_spec("W7").weather_terms == std::vector<WeatherTerm>{{Signal::hr, 0}, {Signal::hd, 0}});
  CHECK(feature_spec("I5").flow_terms == std::vector<int>{-2, -1, 0});
  CHECK(feature_spec("WIT").column_names() ==
        std::vector<std::string>{"Y_t-168", "Y_t-24", "Y_t-2", "Y_t-1", "hr_t-1", "hr_t", "hr_t+1", "I_t-1", "I_t"});
  CHECK_THROWS_WITH_AS(feature_spec("W9"), doctest::Contains("X, T, W1, W2, W3, W4, W5, W6, W7, I1, I2, I3, I4, I5, WIT"),
                       std::invalid_argument);

  Rng rng(21);
  const std::size_t hours = 240;
  ODDemandPanel panel = random_panel(hours, 3, rng);
  panel.od_pairs = {{0, "A", "B"}, {1, "B", "A"}, {2, "A", "C"}};
  std::vector<double> hr(hours), hd(hours);
  for (std::size_t i = 0; i < hours; ++i) hr[i] = 0.5 * static_cast<double>(i % 7), hd[i] = static_cast<double>(i % 60);
  const auto weather = make_weather(panel.grid, hr, hd);
  ZoneFlowSeries flows;
  flows.grid = panel.grid;
  flows.zones = {"A", "B", "C"};
  flows.flow = Tensor(hours, 3);
  for (std::size_t i = 0; i < hours; ++i)
    for (std::size_t z = 0; z < 3; ++z) flows.flow(i, z) = static_cast<double>(100 * z + i);

  const Hour t = kStart + 200;
  const auto x = assemble_features(feature_spec("X"), panel, nullptr, nullptr, t);
  CHECK(x.x == build_lags(panel, t));

  const auto i3 = assemble_features(feature_spec("I3"), panel, nullptr, &flows, t);
  CHECK(i3.x(0, 4) == 200.0);  // origin A
  CHECK(i3.x(1, 4) == 300.0);  // origin B
  CHECK(i3.x(2, 4) == 200.0);

  const auto wit = assemble_features(feature_spec("WIT"), panel, &weather, &flows, t);
  CHECK(wit.x.cols() == 9);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(wit.x(r, 4) == hr[199]);
    CHECK(wit.x(r, 5) == hr[200]);
    CHECK(wit.x(r, 6) == hr[201]);
    CHECK(wit.x(r, 7) == flows.at(panel.od_pairs[r].origin, t - 1));
    CHECK(wit.x(r, 8) == flows.at(panel.od_pairs[r].origin, t));
  }
  CHECK_THROWS_WITH_AS(assemble_features(feature_spec("WIT"), panel, &weather, &flows, panel.grid.end() - 1),
                       doctest::Contains("hr"), DataError);
  CHECK_THROWS_AS(assemble_features(feature_spec("W1"), panel, nullptr, nullptr, t), DataError);

  const auto [first, end] = feature_range(feature_spec("WIT"), panel.grid);
  CHECK(first == kStart + 168);
  CHECK(end == panel.grid.end() - 1);

  std::vector<Hour> ts;
  for (Hour h = first; h < end; h = h + 1) ts.push_back(h);
  const auto all = assemble_all(feature_spec("WIT"), panel, &weather, &flows, ts);
  REQUIRE(all.size() == ts.size());
  CHECK(all[5].x == assemble_features(feature_spec("WIT"), panel, &weather, &flows, ts[5]).x);

  const auto sc = Standardizer::fit(all);
  const auto z = sc.apply(all[0].x);
  CHECK(z.cols() == 9);
  double m = 0.0;
  for (const auto& fm : all)
    for (std::size_t r = 0; r < 3; ++r) m += sc.apply(fm.x)(r, 5);
  CHECK(std::abs(m) < 1e-9);
}

TEST_CASE("CSV loaders") {
  const auto trips = write_tmp("bikeod_trips.csv", "departure_ts,origin_station,dest_station\n2024-03-04T08:14:00,A,B\n");
  CHECK(load_trips(trips).front().departure == kStart + 8);
  std::ofstream(trips) << "departure_ts,origin_station,dest_station\nyesterday,A,B\n";
  CHECK_THROWS_WITH_AS(load_trips(trips), doctest::Contains("row 2"), DataError);
  std::filesystem::remove(trips);

  const auto loops = write_tmp("bikeod_loops.csv", "ts,loop_id,flow,occupancy\n2024-03-04T08:06,L1,5,12\n2024-03-04T08:12,L1,,\n");
  const auto recs = load_loop_records(loops);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].minute == (kStart + 8).value * 60 + 6);
  CHECK_FALSE(recs[1].flow.has_value());
  std::filesystem::remove(loops);

  const auto map = write_tmp("bikeod_loopmap.csv", "loop_id,zone_id\nL1,z00\nL1,z01\n");
  CHECK_THROWS_AS(load_loop_zones(map), DataError);
  std::filesystem::remove(map);
}
