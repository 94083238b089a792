// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset, e.g. `acceptance 1 2 11`.

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "bikeod/config.hpp"
#include "bikeod/features.hpp"
#include "bikeod/geo.hpp"
#include "bikeod/model.hpp"
#include "bikeod/pipeline.hpp"
#include "bikeod/synth.hpp"
#include "bikeod/workflow.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace bikeod;
using bikeod::testing::random_stack;
using bikeod::testing::random_tensor;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  void fail(std::string why) {
    if (pass) detail.clear();
    pass = false;
    detail += (detail.empty() ? "" : "; ") + why;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

model::ModelConfig tiny_model(const features::FeatureSpec& spec, std::size_t h = 3, std::size_t k = 1) {
  model::ModelConfig c;
  c.h_t = c.h_s = h;
  c.k_e = c.k_d = k;
  c.dropout = 0.0;
  c.embedding = model::EmbeddingConfig{2, 2, {3, 3}, 2};
  c.variant = spec;
  return c;
}

features::CalendarEncoding some_encoding() {
  features::CalendarEncoding e;
  e.classes = {9, 4, 1, 0, 1, 0};
  return e;
}

// --- 1 ---------------------------------------------------------------------------------------

Outcome gradients() {
  Outcome out;
  double worst = 0.0;
  std::size_t entries = 0;
  auto record = [&](const std::string& what, const testing::GradCheckResult& r) {
    worst = std::max(worst, r.max_rel_error);
    entries += r.checked;
    if (!(r.max_rel_error <= 1e-4)) out.fail(fmt::format("{}: {:.2e} at {}", what, r.max_rel_error, r.worst));
  };
  Rng rng(101);
  const auto stack = random_stack(5, rng);

  // layer by layer
  for (auto act : {model::Activation::Tanh, model::Activation::Relu}) {
    for (std::size_t f_out : {3, 4}) {
      ad::ParameterSet ps;
      ps.add("blk.W", random_tensor(7 * 3, f_out, rng));
      ps.add("blk.b", random_tensor(1, f_out, rng, 0.1));
      if (f_out != 3) ps.add("blk.P", random_tensor(3, f_out, rng));
      const auto h = random_tensor(5, 3, rng, 2.0);
      const auto w = random_tensor(5, f_out, rng);
      auto loss = [&](ad::Tape& t, ad::ParameterSet& p) {
        model::Binder bind(t, p, &p);
        return ad::mean(ad::mul(model::rmgc_forward(bind, "blk", t.constant(h), stack, act), t.constant(w)));
      };
      record(fmt::format("rmgc {} f_out={}", model::activation_name(act), f_out), testing::grad_check(ps, loss));
    }
  }
  for (auto cell : {model::CellType::Gru, model::CellType::Lstm}) {
    auto c = tiny_model(features::feature_spec("X"));
    c.cell = cell;
    auto m = model::init_params(c, 5, 7);
    ad::ParameterSet ps;
    for (auto& p : m.params)
      if (p.name.rfind("temporal.", 0) == 0) ps.add(p.name, p.value);
    std::vector<Tensor> xs;
    for (int k = 0; k < 4; ++k) xs.push_back(random_tensor(1, 5, rng));
    const auto w = random_tensor(1, 3, rng);
    auto loss = [&](ad::Tape& t, ad::ParameterSet& p) {
      model::Binder bind(t, p, &p);
      std::vector<ad::Var> vs;
      for (const auto& x : xs) vs.push_back(t.constant(x));
      return ad::mean(ad::mul(model::temporal_encode(bind, vs, cell), t.constant(w)));
    };
    record(fmt::format("temporal {}", model::cell_name(cell)), testing::grad_check(ps, loss));
  }
  {
    auto m = model::init_params(tiny_model(features::feature_spec("T")), 5, 8);
    ad::ParameterSet ps;
    for (auto& p : m.params)
      if (p.name.rfind("embed", 0) == 0) ps.add(p.name, p.value);
    const auto enc = some_encoding();
    std::vector<Tensor> one_hots;
    for (std::size_t f = 0; f < features::kCalendarFeatures; ++f) one_hots.push_back(enc.one_hot(f));
    const auto w = random_tensor(1, 2, rng);
    auto loss = [&](ad::Tape& t, ad::ParameterSet& p) {
      model::Binder bind(t, p, &p);
      return ad::mean(ad::mul(model::embed_time(bind, one_hots, model::DropoutContext{}), t.constant(w)));
    };
    record("embedding", testing::grad_check(ps, loss));
  }

  // the full tiny model: N=5, h=3, K=1
  for (const char* v : {"X", "T", "W5", "I2", "WIT"}) {
    for (auto cell : {model::CellType::Gru, model::CellType::Lstm}) {
      auto c = tiny_model(features::feature_spec(v));
      c.cell = cell;
      c.activation = model::Activation::Tanh;
      c.dropout = 0.3;
      auto m = model::init_params(c, 5, 21);
      // nonzero biases keep ReLU units off their kink
      for (auto& p : m.params)
        if (p.name.back() == 'b') p.value = random_tensor(p.value.rows(), p.value.cols(), rng, 0.2);
      const auto x = random_tensor(5, c.variant.width(), rng);
      const auto y = random_tensor(5, 1, rng, 3.0);
      const auto enc = some_encoding();
      auto loss = [&](ad::Tape& t, ad::ParameterSet& p) {
        Rng drop(77);
        model::Binder bind(t, p, &p);
        const auto pred =
            model::model_forward(bind, m, x, enc, stack, model::DropoutContext{Mode::Train, &drop, c.dropout});
        return ad::mse_loss(pred, t.constant(y));
      };
      const auto r = testing::grad_check(m.params, loss);
      if (r.checked != m.params.scalar_count()) out.fail(fmt::format("model {}: not every parameter checked", v));
      record(fmt::format("model {} {}", v, model::cell_name(cell)), r);
    }
  }
  if (out.pass) out.detail = fmt::format("max relative error {:.2e} over {} entries", worst, entries);
  return out;
}

// --- 2 ---------------------------------------------------------------------------------------

Outcome rmgc_oracle() {
  Outcome out;
  Rng rng(202);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 8, f_in = 1 + rng() % 5, f_out = 1 + rng() % 5;
    const auto stack = random_stack(n, rng);
    const model::RMGCBlock blk{random_tensor(7 * f_in, f_out, rng), random_tensor(1, f_out, rng),
                               f_in == f_out ? Tensor() : random_tensor(f_in, f_out, rng)};
    const auto h = random_tensor(n, f_in, rng, 2.0);
    const auto act = trial % 2 ? model::Activation::Tanh : model::Activation::Relu;
    const auto got = model::rmgc_forward(blk, h, stack, act);
    const auto want = testing::naive_rmgc(blk, h, stack, act);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < f_out; ++o) worst = std::max(worst, std::abs(got(i, o) - want[i][o]));
  }
  if (!(worst <= 1e-12)) out.fail(fmt::format("max deviation {:.2e}", worst));
  else out.detail = fmt::format("20 instances, max deviation {:.1e}", worst);
  return out;
}

// --- 3 ---------------------------------------------------------------------------------------

Outcome aggregation() {
  Outcome out;
  Rng rng(303);
  std::size_t merges = 0;
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 3 + rng() % 10;  // 3..12 zones
    const auto base = testing::random_partition(n, rng);
    const std::size_t target = 1 + rng() % (n - 1);
    const auto agg = geo::aggregate_to(base, target);
    const auto oracle = testing::brute_force_merges(base, target);
    merges += oracle.size();
    if (agg.merges().size() != oracle.size()) {
      out.fail(fmt::format("trial {}: {} merges, oracle {}", trial, agg.merges().size(), oracle.size()));
      continue;
    }
    for (std::size_t k = 0; k < oracle.size(); ++k)
      if (agg.merges()[k].first != oracle[k].first || agg.merges()[k].second != oracle[k].second)
        out.fail(fmt::format("trial {} merge {}: ({}, {}) vs exhaustive ({}, {})", trial, k, agg.merges()[k].first,
                             agg.merges()[k].second, oracle[k].first, oracle[k].second));
    if (std::abs(agg.total_surface() - base.total_surface()) > 1e-6 * base.total_surface())
      out.fail(fmt::format("trial {}: surface not conserved", trial));
    if (!testing::aggregates_contiguous(base, agg)) out.fail(fmt::format("trial {}: non-contiguous aggregate", trial));
  }
  const auto grid = testing::unit_grid(3, 3);
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& [ij, perimeter] : grid.adjacency()) {
    const auto& a = grid.zone(ij.first).id;
    const auto& b = grid.zone(ij.second).id;
    pairs.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(pairs.begin(), pairs.end());
  const auto tie = geo::aggregate_to(grid, 8);
  if (tie.merges().size() != 1 || tie.merges()[0].first != pairs[0].first ||
      tie.merges()[0].second != pairs[0].second)
    out.fail("3x3 tie did not merge the lexicographically smallest pair");
  if (out.pass)
    out.detail = fmt::format("25 partitions, {} merges equal the exhaustive minimum; tie pair ({}, {})", merges,
                             pairs[0].first, pairs[0].second);
  return out;
}

// --- 4 ---------------------------------------------------------------------------------------

Outcome calendar_encoding() {
  Outcome out;
  for (int h = 0; h < 24; ++h) {
    const int want = (h >= 6 && h <= 22) ? h - 5 : 0;
    if (features::hour_class(h) != want)
      out.fail(fmt::format("hour {} -> {}, expected {}", h, features::hour_class(h), want));
  }
  if (features::hour_class(6) != 1 || features::hour_class(22) != 17) out.fail("6:00 or 22:00 misclassified");

  // every hour of two weeks, every flag combination
  const Hour start = parse_hour("2024-07-01T00:00");
  features::Calendar cal;
  for (int d = 0; d < 14; ++d) {
    const Date day = date_of(start + 24 * d);
    cal[day] = features::CalendarDay{d % 2 == 0, d % 3 == 0, d % 5 == 0, d % 7 == 3};
  }
  std::size_t encodings = 0;
  for (int k = 0; k < 14 * 24; ++k) {
    const Hour t = start + k;
    const auto e = features::encode_calendar(t, cal);
    const auto& day = cal.at(date_of(t));
    const std::array<std::size_t, 6> want = {static_cast<std::size_t>(features::hour_class(k % 24)),
                                             static_cast<std::size_t>((k / 24) % 7), day.business_day,
                                             day.school_holiday, day.holiday_departure, day.holiday_return};
    for (std::size_t f = 0; f < features::kCalendarFeatures; ++f) {
      const auto v = e.one_hot(f);
      double ones = 0.0, others = 0.0;
      for (std::size_t c = 0; c < v.cols(); ++c) (c == want[f] ? ones : others) += v(0, c);
      if (v.rows() != 1 || v.cols() != features::kCalendarClasses[f] || ones != 1.0 || others != 0.0)
        out.fail(fmt::format("{} feature {}: bad one-hot", format_hour(t), f));
    }
    ++encodings;
  }
  if (out.pass) out.detail = fmt::format("24 hour classes and {} encodings x 6 one-hots", encodings);
  return out;
}

// --- 5 ---------------------------------------------------------------------------------------

Outcome shapes() {
  Outcome out;
  Rng rng(505);
  std::size_t cases = 0;
  for (std::size_t n : {5, 50, 130}) {
    const auto stack = random_stack(n, rng);
    for (std::size_t l : {4, 9}) {
      for (std::size_t p : {0, 10}) {
        const auto x = random_tensor(n, l, rng);
        const auto tiled = model::tile_and_concat(x, random_tensor(1, p, rng));
        if (tiled.rows() != n || tiled.cols() != l + p)
          out.fail(fmt::format("tile_and_concat N={} L={} p={} gave {}x{}", n, l, p, tiled.rows(), tiled.cols()));
        auto spec = features::feature_spec(l == 4 ? "X" : "WIT");
        spec.embedding = p > 0;
        auto c = tiny_model(spec, 4);
        c.embedding.p = p > 0 ? p : c.embedding.p;
        const auto m = model::init_params(c, n, 3);
        if (c.input_width() != l + p) out.fail(fmt::format("input width {} for L={} p={}", c.input_width(), l, p));
        const auto y = model::predict(m, x, some_encoding(), stack);
        if (y.rows() != n || y.cols() != 1) out.fail(fmt::format("model N={} L={} p={} gave {}x{}", n, l, p, y.rows(), y.cols()));
        ++cases;
      }
    }
  }
  if (out.pass) out.detail = fmt::format("{} (N, L, p) combinations", cases);
  return out;
}

// --- 6 ---------------------------------------------------------------------------------------

Outcome cleaning() {
  Outcome out;
  using features::LoopRecord;
  const Hour h = parse_hour("2024-03-04T08:00");
  auto rec = [](Hour at, int period, std::string loop, std::optional<double> flow, std::optional<double> occ) {
    return LoopRecord{at.value * 60 + period * 6, std::move(loop), flow, occ};
  };
  std::vector<LoopRecord> recs;
  for (int p = 0; p < 10; ++p) recs.push_back(rec(h, p, "full", 4.0 + p, 12.0));                    // sum 85
  for (int p = 0; p < 5; ++p) recs.push_back(rec(h, p, "five", 8.0, 20.0));                        // 5 valid
  for (int p = 5; p < 10; ++p) recs.push_back(rec(h, p, "five", 100.0, 50.5));                     // rejected
  for (int p = 0; p < 4; ++p) recs.push_back(rec(h, p, "four", 9.0, 5.0));                         // 4 valid
  for (int p = 4; p < 10; ++p) recs.push_back(rec(h, p, "four", 9.0, 75.0));
  for (int p = 0; p < 6; ++p) recs.push_back(rec(h, p, "edge", 5.0, p == 0 ? 50.0 : std::optional<double>{}));
  for (int p = 0; p < 3; ++p) recs.push_back(rec(h + 1, p, "edge", 2.0, 1.0));
  const auto clean = features::clean_loop_data(recs);
  auto value = [&](const std::string& loop, Hour at) -> std::optional<double> {
    const auto it = clean.find(loop);
    if (it == clean.end() || !it->second.count(at)) return std::nullopt;
    return it->second.at(at);
  };
  // hourly estimate = sum of valid flows * 10 / valid periods
  if (value("full", h) != 85.0) out.fail("complete hour is not the plain sum");
  if (value("five", h) != 80.0) out.fail("5 valid periods should give 8 * 5 * 10 / 5 = 80");
  if (value("four", h)) out.fail("4 valid periods must drop the hour");
  if (value("edge", h)) out.fail("missing occupancy must not count as valid");
  if (value("edge", h + 1)) out.fail("3 periods must drop the hour");

  // interpolation between valid hours, held flat at the ends
  features::LoopHourly hourly;
  hourly["a"][h] = 100.0;
  hourly["a"][h + 4] = 300.0;
  hourly["b"][h + 2] = 40.0;
  const auto f = features::aggregate_flow_by_zone(hourly, {{"a", "Z"}, {"b", "Y"}}, {"Y", "Z"}, HourGrid{h - 1, 7});
  const double want_z[7] = {100, 100, 150, 200, 250, 300, 300};
  for (int k = 0; k < 7; ++k) {
    if (f.at("Z", h - 1 + k) != want_z[k]) out.fail(fmt::format("interpolated Z at +{} is {}", k, f.at("Z", h - 1 + k)));
    if (f.at("Y", h - 1 + k) != 40.0) out.fail("single valid hour should be held flat");
  }
  if (out.pass) out.detail = "5-period rule, >50% occupancy, x10/count scaling, interpolation exact";
  return out;
}

// --- 7 ---------------------------------------------------------------------------------------

Outcome metrics() {
  Outcome out;
  const std::vector<double> p = {2.0, 0.5, 3.0, 1.0}, y = {1.0, 0.0, 4.0, 2.0};
  // (1 + 0.25 + 1 + 1) / 4 and (1/1 + 1/4 + 1/2) / 3
  if (std::abs(pipeline::mse(p, y) - 0.8125) > 1e-15) out.fail("mse oracle");
  if (std::abs(pipeline::mape(p, y) - 1.75 / 3.0) > 1e-15) out.fail("mape oracle");

  // generated city: scenario subsets and zero fraction against the generator's own record
  synth::SynthConfig sc;
  sc.grid = 3;
  sc.days = 12;
  sc.trips_per_hour = 40;
  sc.seed = 77;
  sc.rain.episodes_per_day = 1.5;
  const auto data = synth::generate_all(sc);
  const auto trips = synth::expand_trips(sc, data.city, data.demand.counts);
  const HourGrid grid = data.demand.counts.grid;
  const auto panel = features::trips_to_panel(trips, data.city.stations, data.city.partition, grid);
  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < panel.size(); ++k)
    if (panel.od_pairs[k].origin != panel.od_pairs[k].destination) keep.push_back(k);

  pipeline::Predictions pred;
  std::map<Hour, std::size_t> truth_zeros;
  for (const auto& t : data.demand.truth) truth_zeros[t.t] = t.zero_ods;
  for (std::size_t i = 0; i < grid.count; ++i)
    if (features::DayWindow{}.contains(hour_of_day(grid.at(i)))) pred.hours.push_back(grid.at(i));
  pred.actual = Tensor(pred.hours.size(), keep.size());
  for (std::size_t r = 0; r < pred.hours.size(); ++r)
    for (std::size_t c = 0; c < keep.size(); ++c) pred.actual(r, c) = panel.at(pred.hours[r], keep[c]);
  pred.predicted = pred.actual;

  std::map<std::string, std::size_t> counts;
  std::size_t checked = 0;
  for (const auto& s : pipeline::default_scenarios()) {
    const auto sub = pipeline::apply_scenario(pred, data.weather.series, s);
    counts[s.id] = sub.stats.hours;
    double zeros = 0.0;
    std::size_t hours = 0;
    for (Hour t : pred.hours) {
      const double hr = data.weather.series.hr_at(t), dcr = data.weather.series.dcr_at(t);
      bool in = true;
      if (s.id == "hr=0") in = hr == 0.0;
      else if (s.id == "hr>0") in = hr > 0.0;
      else if (s.id == "hr>1") in = hr > 1.0;
      else if (s.id == "dcr=0") in = dcr == 0.0;
      else if (s.id == "0<dcr<=1") in = dcr > 0.0 && dcr <= 1.0;
      else if (s.id == "1<dcr<=3") in = dcr > 1.0 && dcr <= 3.0;
      else if (s.id == "dcr>3") in = dcr > 3.0;
      if (!in) continue;
      ++hours;
      zeros += static_cast<double>(truth_zeros.at(t));
    }
    if (hours != sub.stats.hours) out.fail(fmt::format("{}: {} hours, expected {}", s.id, sub.stats.hours, hours));
    if (hours == 0) continue;
    const double want = zeros / (static_cast<double>(hours) * static_cast<double>(keep.size()));
    if (std::abs(sub.stats.zero_fraction - want) > 1e-12)
      out.fail(fmt::format("{}: zero fraction {} vs ground truth {}", s.id, sub.stats.zero_fraction, want));
    ++checked;
  }
  const std::size_t all = counts["all"];
  if (counts["hr=0"] + counts["hr>0"] != all) out.fail("hr scenarios do not partition the window");
  if (counts["dcr=0"] + counts["0<dcr<=1"] + counts["1<dcr<=3"] + counts["dcr>3"] != all)
    out.fail("dcr scenarios do not partition the window");
  if (counts["hr>0"] == 0) out.fail("no rainy test hours generated");
  if (out.pass)
    out.detail = fmt::format("oracles exact; {} hours split {}+{} by hr; zero fraction matches truth in {} scenarios",
                             all, counts["hr=0"], counts["hr>0"], checked);
  return out;
}

// --- 8 ---------------------------------------------------------------------------------------

Outcome overfit() {
  Outcome out;
  const Hour start = parse_hour("2023-01-02T00:00");
  ODDemandPanel panel;
  for (std::size_t i = 0; i < 5; ++i) panel.od_pairs.push_back({i, fmt::format("a{}", i), fmt::format("b{}", i)});
  panel.grid = {start, 168 + 32};
  panel.demand = Tensor(panel.grid.count, 5);
  Rng rng(808);
  for (double& v : panel.demand.data()) v = static_cast<double>(rng() % 7);
  std::vector<Hour> hours;
  for (std::size_t i = 168; i < panel.grid.count; ++i) hours.push_back(panel.grid.at(i));
  const auto data = pipeline::build_dataset(features::feature_spec("X"), panel, nullptr, nullptr, {}, hours);
  if (data.samples.size() != 32) out.fail("expected 32 samples");
  const auto stack = random_stack(5, rng);
  pipeline::TrainConfig tc;
  tc.lr = 1e-2;
  tc.dropout = 0.0;
  tc.epochs = 2000;
  tc.seed = 8;
  auto c = tiny_model(features::feature_spec("X"), 8);
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = pipeline::train(model::init_params(c, 5, 8), data, stack, tc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double ratio = res.loss_curve.back() / res.loss_curve.front();
  if (!(ratio < 0.05)) out.fail(fmt::format("final/initial train MSE {:.3f}", ratio));
  if (secs > 300) out.fail(fmt::format("took {:.0f} s", secs));
  if (out.pass) out.detail = fmt::format("final/initial train MSE {:.4f} after 2000 epochs", ratio);
  return out;
}

// --- 9, 10 -------------------------------------------------------------------------------------

/// Synthetic city for the directional checks: 25 zones, 180 train + 45 test days.
json experiment_config(std::uint64_t seed, const fs::path& out) {
  json j = json::parse(R"({
    "synth": {"grid": 5, "days": 225, "beta": 0.7},
    "split": {"test_days": 45},
    "variants": ["X", "T", "W4"],
    "train": {"epochs": 4, "lr": 0.002, "dropout": 0.0, "batch_size": 16},
    "model": {"h_t": 8, "h_s": 8, "k_e": 1, "k_d": 1,
              "embedding": {"module_width_1": 8, "module_width_2": 4}}
  })");
  j["seed"] = seed;
  j["out_dir"] = out.string();
  return j;
}

struct Experiment {
  std::vector<pipeline::MetricsReport> reports;
  std::string error;
  double seconds = 0.0;
};

const Experiment& experiment() {
  static const Experiment e = [] {
    Experiment e;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      for (std::uint64_t seed : {11, 12, 13}) {
        const fs::path dir = fs::temp_directory_path() / fmt::format("bikeod_acceptance_seed{}", seed);
        fs::remove_all(dir);
        const auto cfg = config::parse_config(experiment_config(seed, dir));
        std::ostringstream log;
        workflow::run_all(cfg, log);
        e.reports.push_back(pipeline::MetricsReport::from_csv(slurp(dir / "eval/metrics.csv")));
        fmt::print("  seed {}:\n{}", seed, slurp(dir / "report/report.txt"));
        std::fflush(stdout);
        fs::remove_all(dir);
      }
    } catch (const std::exception& ex) {
      e.error = ex.what();
    }
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return e;
  }();
  return e;
}

double metric(const pipeline::MetricsReport& r, const std::string& variant, const std::string& scenario) {
  const auto* row = r.find(variant, scenario);
  if (!row || !row->mse) throw std::runtime_error(fmt::format("no mse for {} / {}", variant, scenario));
  return *row->mse;
}

Outcome weather_finding() {
  Outcome out;
  const auto& e = experiment();
  if (!e.error.empty()) {
    out.fail(e.error);
    return out;
  }
  std::vector<double> rain, dry;
  for (const auto& r : e.reports) {
    rain.push_back(metric(r, "W4", "hr>0") / metric(r, "X", "hr>0"));
    dry.push_back(std::abs(metric(r, "W4", "hr=0") / metric(r, "X", "hr=0") - 1.0));
  }
  const double mr = median(rain), md = median(dry);
  if (!(mr <= 0.9)) out.fail(fmt::format("median hr>0 MSE ratio W4/X {:.3f} > 0.9", mr));
  if (!(md < 0.05)) out.fail(fmt::format("median hr=0 difference {:.1f}% >= 5%", 100 * md));
  if (e.seconds > 45 * 60) out.fail(fmt::format("took {:.0f} s", e.seconds));
  if (out.pass)
    out.detail = fmt::format("median W4/X MSE under rain {:.3f} (seeds {:.3f} {:.3f} {:.3f}); dry difference {:.1f}%; "
                             "{:.0f} s",
                             mr, rain[0], rain[1], rain[2], 100 * md, e.seconds);
  return out;
}

Outcome embedding_finding() {
  Outcome out;
  const auto& e = experiment();
  if (!e.error.empty()) {
    out.fail(e.error);
    return out;
  }
  std::vector<double> gain;
  for (const auto& r : e.reports) gain.push_back(1.0 - metric(r, "T", "all") / metric(r, "X", "all"));
  const double m = median(gain);
  const std::string seeds = fmt::format("seeds {:.1f}% {:.1f}% {:.1f}%", 100 * gain[0], 100 * gain[1], 100 * gain[2]);
  if (!(m >= 0.03)) out.fail(fmt::format("median overall MSE reduction of T over X {:.1f}% < 3% ({})", 100 * m, seeds));
  else out.detail = fmt::format("median overall MSE reduction of T over X {:.1f}% ({})", 100 * m, seeds);
  return out;
}

// --- 11 --------------------------------------------------------------------------------------

Outcome determinism() {
  Outcome out;
  const fs::path root = fs::temp_directory_path() / "bikeod_acceptance_det";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path cfg_path = root / "config.json";
  std::ofstream(cfg_path) << R"({
    "seed": 4,
    "synth": {"grid": 4, "days": 14, "trips_per_hour": 120},
    "aggregation": {"target_zones": 10},
    "split": {"test_days": 2},
    "variants": ["X", "T", "W4", "I3", "WIT"],
    "train": {"epochs": 2, "lr": 0.002},
    "model": {"h_t": 6, "h_s": 6, "k_e": 2, "k_d": 1, "embedding": {"module_width_1": 6, "module_width_2": 4, "p": 4}}
  })";
  std::string reports[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = root / fmt::format("run{}", run);
    const std::string cmd =
        fmt::format("{} all --config {} --out-dir {} > {} 2>&1", BIKEOD_CLI, cfg_path.string(), dir.string(),
                    (root / fmt::format("log{}.txt", run)).string());
    if (std::system(cmd.c_str()) != 0) {
      out.fail(fmt::format("CLI chain failed: {}", slurp(root / fmt::format("log{}.txt", run))));
      return out;
    }
    reports[run] = slurp(dir / "report/report.txt") + slurp(dir / "report/report.csv");
    const auto manifest = json::parse(slurp(dir / "manifest.json"));
    if (manifest["stages"].size() != 7) out.fail("manifest does not list all 7 stages");
  }
  const auto m0 = json::parse(slurp(root / "run0/manifest.json"))["stages"];
  const auto m1 = json::parse(slurp(root / "run1/manifest.json"))["stages"];
  if (reports[0] != reports[1]) out.fail("reports differ");
  if (m0 != m1) out.fail("artifact digests differ");
  if (out.pass)
    out.detail = fmt::format("two CLI runs, identical report ({} bytes) and all {} artifact digests", reports[0].size(),
                             [&] {
                               std::size_t n = 0;
                               for (const auto& [k, v] : m0.items()) n += v["outputs"].size();
                               return n;
                             }());
  fs::remove_all(root);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradients},
      {"RMGC oracle equivalence", rmgc_oracle},
      {"aggregation oracle", aggregation},
      {"calendar encoding", calendar_encoding},
      {"shape contract", shapes},
      {"loop-detector cleaning", cleaning},
      {"metrics and scenarios", metrics},
      {"overfit capacity", overfit},
      {"weather finding (W4 vs X)", weather_finding},
      {"time embedding finding (T vs X)", embedding_finding},
      {"end-to-end determinism", determinism},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (!only.empty() && !only.count(k + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    fmt::print("{} {:>2}. {}: {} [{:.1f} s]\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first, o.detail, secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
