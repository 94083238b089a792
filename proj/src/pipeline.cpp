#include "bikeod/pipeline.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "bikeod/csv.hpp"
#include "bikeod/error.hpp"
#include "bikeod/omp.hpp"

namespace bikeod::pipeline {

using features::FeatureSpec;
using features::WeatherSeries;

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument(fmt::format("lr must be > 0, got {}", lr));
  if (!(decay >= 0.0)) throw std::invalid_argument(fmt::format("decay must be >= 0, got {}", decay));
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument(fmt::format("dropout must be in [0, 1), got {}", dropout));
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
}

void SplitSpec::validate() const {
  if (!(train.begin < train.end)) throw std::invalid_argument("train window is empty");
  if (!(test.begin < test.end)) throw std::invalid_argument("test window is empty");
  if (train.overlaps(test)) {
    throw std::invalid_argument(fmt::format("train window [{}, {}) overlaps test window [{}, {})",
                                            format_hour(train.begin), format_hour(train.end),
                                            format_hour(test.begin), format_hour(test.end)));
  }
  if (test_hours.first_hour < 0 || test_hours.end_hour > 24 || test_hours.first_hour >= test_hours.end_hour)
    throw std::invalid_argument("test hours must satisfy 0 <= first < end <= 24");
}

std::vector<Hour> SplitSpec::train_timestamps() const {
  std::vector<Hour> out;
  for (Hour t = train.begin; t < train.end; t = t + 1) out.push_back(t);
  return out;
}

std::vector<Hour> SplitSpec::test_timestamps() const {
  std::vector<Hour> out;
  for (Hour t = test.begin; t < test.end; t = t + 1)
    if (test_hours.contains(hour_of_day(t))) out.push_back(t);
  return out;
}

// --- dataset ----------------------------------------------------------------------------

namespace {

bool offsets_available(const FeatureSpec& spec, const WeatherSeries* weather, const features::ZoneFlowSeries* flows,
                       Hour t) {
  for (const auto& w : spec.weather_terms)
    if (weather && !weather->grid.contains(t + w.offset)) return false;
  for (int o : spec.flow_terms)
    if (flows && !flows->grid.contains(t + o)) return false;
  return true;
}

}  // namespace

Dataset build_dataset(const FeatureSpec& spec, const ODDemandPanel& panel, const WeatherSeries* weather,
                      const features::ZoneFlowSeries* flows, const features::Calendar& calendar,
                      const std::vector<Hour>& hours) {
  Dataset d;
  d.spec = spec;
  const auto [first, end] = features::feature_range(spec, panel.grid);
  std::vector<Hour> kept;
  for (Hour t : hours) {
    if (t >= first && t < end && offsets_available(spec, weather, flows, t)) {
      kept.push_back(t);
    } else {
      ++d.skipped;
    }
  }
  auto mats = features::assemble_all(spec, panel, weather, flows, kept);
  d.samples.reserve(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    Sample s;
    s.t = kept[i];
    s.x = std::move(mats[i].x);
    if (spec.embedding || calendar.count(date_of(s.t))) s.encoding = features::encode_calendar(s.t, calendar);
    const std::size_t row = panel.grid.index(s.t);
    s.y = Tensor(panel.size(), 1);
    for (std::size_t od = 0; od < panel.size(); ++od) s.y(od, 0) = panel.demand(row, od);
    d.samples.push_back(std::move(s));
  }
  return d;
}

// --- training ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kDropoutStream = 0x9e3779b97f4a7c15ULL;

double holdout_loss(const model::ForecastModel& m, const Dataset& data, const GraphStack& stack) {
  double total = 0.0;
  for (const auto& s : data.samples) {
    ad::Tape tape;
    model::Binder bind(tape, m.params);
    const Tensor y = model::model_forward(bind, m, m.scaler.apply(s.x), s.encoding, stack, {}).value();
    total += mse(y, s.y);
  }
  return data.samples.empty() ? 0.0 : total / static_cast<double>(data.samples.size());
}

}  // namespace

TrainResult train(model::ForecastModel m, const Dataset& data, const GraphStack& stack, const TrainConfig& config,
                  const Dataset* holdout) {
  config.validate();
  if (data.samples.empty()) throw DataError("training set is empty");
  if (data.spec != m.config.variant) {
    throw std::invalid_argument(
        fmt::format("model variant {} does not match dataset variant {}", m.config.variant.variant, data.spec.variant));
  }
  if (data.nodes() != m.nodes || stack.nodes() != m.nodes) {
    throw ShapeError(fmt::format("model has {} nodes, dataset {}, graphs {}", m.nodes, data.nodes(), stack.nodes()));
  }
  if (m.scaler.mean.empty()) {
    std::vector<features::FeatureMatrix> mats;
    mats.reserve(data.samples.size());
    for (const auto& s : data.samples) mats.push_back({s.t, s.x});
    m.scaler = features::Standardizer::fit(mats);
  }
  std::vector<Tensor> xs;
  xs.reserve(data.samples.size());
  for (const auto& s : data.samples) xs.push_back(m.scaler.apply(s.x));

  Adam adam(AdamConfig{.lr = config.lr, .decay = config.decay});
  Rng shuffle_rng(config.seed);
  Rng dropout_rng(config.seed ^ kDropoutStream);
  const model::DropoutContext drop{Mode::Train, &dropout_rng, config.dropout};

  TrainResult result;
  std::vector<std::size_t> order(data.samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t batch = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      m.params.zero_grad();
      double batch_sum = 0.0;
      try {
        ad::Tape tape;
        model::Binder bind(tape, m.params, &m.params);
        std::vector<ad::Var> losses;
        for (std::size_t k = start; k < stop; ++k) {
          const Sample& s = data.samples[order[k]];
          const ad::Var pred = model::model_forward(bind, m, xs[order[k]], s.encoding, stack, drop);
          losses.push_back(ad::mean(ad::square(ad::sub(pred, tape.constant(s.y)))));
        }
        ad::Var total = losses.front();
        for (std::size_t k = 1; k < losses.size(); ++k) total = ad::add(total, losses[k]);
        batch_sum = total.value()(0, 0);
        if (!std::isfinite(batch_sum)) throw ad::NonFiniteError("loss is not finite");
        tape.backward(ad::scale(total, 1.0 / static_cast<double>(losses.size())));
        adam.step(m.params);
      } catch (const ad::NonFiniteError& e) {
        throw ad::NonFiniteError(fmt::format("epoch {} batch {}: {}", epoch + 1, batch + 1, e.what()));
      }
      epoch_loss += batch_sum;
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(order.size()));
    if (holdout) result.holdout_curve.push_back(holdout_loss(m, *holdout, stack));
  }
  m.config.dropout = config.dropout;
  result.model = std::move(m);
  return result;
}

// --- metrics ----------------------------------------------------------------------------

namespace {

void check_pair(std::span<const double> p, std::span<const double> a, const char* what) {
  if (p.size() != a.size())
    throw std::invalid_argument(fmt::format("{}: {} predictions vs {} actuals", what, p.size(), a.size()));
  if (p.empty()) throw std::invalid_argument(fmt::format("{}: empty input", what));
}

}  // namespace

double mse(std::span<const double> p, std::span<const double> a) {
  check_pair(p, a, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - a[i]) * (p[i] - a[i]);
  return s / static_cast<double>(p.size());
}

double mape(std::span<const double> p, std::span<const double> a) {
  check_pair(p, a, "mape");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (a[i] > 0.0) {
      s += std::abs(p[i] - a[i]) / a[i];
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("mape: no nonzero actual values");
  return s / static_cast<double>(n);
}

double mse(const Tensor& p, const Tensor& a) {
  if (p.rows() != a.rows() || p.cols() != a.cols())
    throw ShapeError(fmt::format("mse: {} vs {}", shape_string(p), shape_string(a)));
  return mse(p.values(), a.values());
}

double mape(const Tensor& p, const Tensor& a) {
  if (p.rows() != a.rows() || p.cols() != a.cols())
    throw ShapeError(fmt::format("mape: {} vs {}", shape_string(p), shape_string(a)));
  return mape(p.values(), a.values());
}

// --- predictions ------------------------------------------------------------------------

Predictions Predictions::rows(const std::vector<std::size_t>& keep) const {
  Predictions out;
  out.actual = Tensor(keep.size(), actual.cols());
  out.predicted = Tensor(keep.size(), predicted.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out.hours.push_back(hours.at(keep[i]));
    for (std::size_t c = 0; c < actual.cols(); ++c) {
      out.actual(i, c) = actual(keep[i], c);
      out.predicted(i, c) = predicted(keep[i], c);
    }
  }
  return out;
}

Predictions predict_dataset(const model::ForecastModel& m, const Dataset& data, const GraphStack& stack) {
  if (data.spec != m.config.variant) {
    throw std::invalid_argument(
        fmt::format("model variant {} does not match dataset variant {}", m.config.variant.variant, data.spec.variant));
  }
  const std::size_t t = data.samples.size(), n = data.nodes();
  Predictions out;
  out.actual = Tensor(t, n);
  out.predicted = Tensor(t, n);
  std::vector<std::exception_ptr> errors(t);
  const auto count = static_cast<std::int64_t>(t);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      const Sample& s = data.samples[i];
      const Tensor y = model::predict(m, s.x, s.encoding, stack);
      for (std::size_t c = 0; c < n; ++c) {
        out.predicted(i, c) = y(c, 0);
        out.actual(i, c) = s.y(c, 0);
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (const auto& s : data.samples) out.hours.push_back(s.t);
  return out;
}

void write_predictions(std::ostream& out, const Predictions& p) {
  out << "ts,od_index,actual,predicted\n";
  for (std::size_t i = 0; i < p.hours.size(); ++i) {
    const std::string ts = format_hour(p.hours[i]);
    for (std::size_t c = 0; c < p.actual.cols(); ++c) {
      out << ts << ',' << c << ',' << format_number(p.actual(i, c)) << ',' << format_number(p.predicted(i, c))
          << '\n';
    }
  }
}

Predictions read_predictions(const std::filesystem::path& path) {
  const CsvTable t = CsvTable::read(path);
  t.require({"ts", "od_index", "actual", "predicted"});
  const std::size_t cts = t.column("ts"), cod = t.column("od_index"), ca = t.column("actual"),
                    cp = t.column("predicted");
  std::vector<Hour> hours;
  std::map<Hour, std::size_t> row_of;
  std::size_t n = 0;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const Hour h = parse_hour(t.cell(r, cts));
    if (row_of.emplace(h, hours.size()).second) hours.push_back(h);
    n = std::max(n, static_cast<std::size_t>(t.number(r, cod)) + 1);
  }
  Predictions p;
  p.hours = hours;
  p.actual = Tensor(hours.size(), n);
  p.predicted = Tensor(hours.size(), n);
  if (t.rows() != hours.size() * n) throw DataError(fmt::format("{}: incomplete prediction grid", path.string()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const std::size_t i = row_of.at(parse_hour(t.cell(r, cts)));
    const auto c = static_cast<std::size_t>(t.number(r, cod));
    p.actual(i, c) = t.number(r, ca);
    p.predicted(i, c) = t.number(r, cp);
  }
  return p;
}

// --- scenarios ----------------------------------------------------------------------------

bool ScenarioFilter::matches(const WeatherSeries& w, Hour t) const {
  switch (predicate) {
    case Predicate::Always: return true;
    case Predicate::HrZero: return w.hr_at(t) == 0.0;
    case Predicate::HrAbove: return w.hr_at(t) > low;
    case Predicate::DcrZero: return w.dcr_at(t) == 0.0;
    case Predicate::DcrBand: {
      const double d = w.dcr_at(t);
      return d > low && d <= high;
    }
  }
  return false;
}

const std::vector<ScenarioFilter>& default_scenarios() {
  static const std::vector<ScenarioFilter> all = {
      {"all", Predicate::Always},
      {"hr=0", Predicate::HrZero},
      {"hr>0", Predicate::HrAbove, 0.0},
      {"hr>1", Predicate::HrAbove, 1.0},
      {"dcr=0", Predicate::DcrZero},
      {"0<dcr<=1", Predicate::DcrBand, 0.0, 1.0},
      {"1<dcr<=3", Predicate::DcrBand, 1.0, 3.0},
      {"dcr>3", Predicate::DcrBand, 3.0},
  };
  return all;
}

const ScenarioFilter& scenario(std::string_view id) {
  for (const auto& s : default_scenarios())
    if (s.id == id) return s;
  std::string names;
  for (const auto& s : default_scenarios()) names += (names.empty() ? "" : ", ") + s.id;
  throw std::invalid_argument(fmt::format("unknown scenario '{}'; known: {}", id, names));
}

std::vector<std::size_t> scenario_rows(const std::vector<Hour>& hours, const WeatherSeries& weather,
                                       const ScenarioFilter& filter) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < hours.size(); ++i) {
    if (!weather.grid.contains(hours[i]))
      throw DataError(fmt::format("weather does not cover test hour {}", format_hour(hours[i])));
    if (filter.matches(weather, hours[i])) keep.push_back(i);
  }
  return keep;
}

ScenarioSubset apply_scenario(const Predictions& test, const WeatherSeries& weather, const ScenarioFilter& filter) {
  ScenarioSubset out;
  out.data = test.rows(scenario_rows(test.hours, weather, filter));
  out.stats.hours = out.data.hours.size();
  const auto vals = out.data.actual.values();
  if (!vals.empty()) {
    const auto zeros = std::count(vals.begin(), vals.end(), 0.0);
    out.stats.zero_fraction = static_cast<double>(zeros) / static_cast<double>(vals.size());
  }
  return out;
}

// --- reports --------------------------------------------------------------------------------

std::vector<MetricsRow> score(const std::string& variant, const Predictions& test, const WeatherSeries& weather,
                              const std::vector<ScenarioFilter>& scenarios) {
  std::vector<MetricsRow> rows;
  for (const auto& f : scenarios) {
    const ScenarioSubset sub = apply_scenario(test, weather, f);
    MetricsRow row{variant, f.id, std::nullopt, std::nullopt, sub.stats.hours, sub.stats.zero_fraction};
    if (sub.data.actual.size() > 0) {
      row.mse = mse(sub.data.predicted, sub.data.actual);
      if (sub.stats.zero_fraction < 1.0) row.mape = mape(sub.data.predicted, sub.data.actual);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

MetricsReport evaluate(const std::vector<VariantRun>& runs, const GraphStack& stack, const WeatherSeries& weather,
                       const std::vector<ScenarioFilter>& scenarios) {
  std::vector<std::vector<MetricsRow>> parts(runs.size());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    if (!r.model || !r.test) throw std::invalid_argument("evaluate: run without model or test set");
    const Predictions p = predict_dataset(*r.model, *r.test, stack);
    parts[i] = score(r.model->config.variant.variant, p, weather, scenarios);
  }
  MetricsReport report;
  for (auto& p : parts) report.rows.insert(report.rows.end(), p.begin(), p.end());
  return report;
}

const MetricsRow* MetricsReport::find(std::string_view variant, std::string_view scenario) const {
  for (const auto& r : rows)
    if (r.variant == variant && r.scenario == scenario) return &r;
  return nullptr;
}

namespace {

std::string opt_number(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

std::string fixed(const std::optional<double>& v, int digits) {
  return v ? fmt::format("{:.{}f}", *v, digits) : std::string("-");
}

struct TextTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> body;
  std::vector<bool> rule_before;

  void add(std::vector<std::string> row, bool rule = false) {
    body.push_back(std::move(row));
    rule_before.push_back(rule);
  }

  std::string render(const std::string& title) const {
    std::vector<std::size_t> w(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) w[c] = header[c].size();
    for (const auto& r : body)
      for (std::size_t c = 0; c < r.size(); ++c) w[c] = std::max(w[c], r[c].size());
    std::size_t total = 0;
    for (auto x : w) total += x + 2;
    const std::string rule(total > 2 ? total - 2 : 0, '-');
    auto line = [&](const std::vector<std::string>& r) {
      std::string s;
      for (std::size_t c = 0; c < r.size(); ++c) {
        // first column left aligned, numbers right aligned
        s += c == 0 ? fmt::format("{:<{}}", r[c], w[c]) : fmt::format("{:>{}}", r[c], w[c]);
        if (c + 1 < r.size()) s += "  ";
      }
      return s + "\n";
    };
    std::string out = title + "\n" + rule + "\n" + line(header) + rule + "\n";
    for (std::size_t i = 0; i < body.size(); ++i) {
      if (rule_before[i]) out += rule + "\n";
      out += line(body[i]);
    }
    return out + rule + "\n";
  }
};

bool in_family(const std::string& v, char family) {
  if (family == 'W') return v == "X" || v == "WIT" || (v.size() >= 2 && v[0] == 'W' && std::isdigit(v[1]));
  if (family == 'I') return v == "X" || (v.size() >= 2 && v[0] == 'I' && std::isdigit(v[1]));
  return v == "X" || v == "T";
}

}  // namespace

std::string MetricsReport::to_csv() const {
  std::string out = "variant,scenario,mse,mape,hours,zero_fraction\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{}\n", r.variant, r.scenario, opt_number(r.mse), opt_number(r.mape), r.hours,
                       format_number(r.zero_fraction));
  }
  return out;
}

MetricsReport MetricsReport::from_csv(std::string_view text) {
  const CsvTable t = CsvTable::parse(text, "<report>");
  t.require({"variant", "scenario", "mse", "mape", "hours", "zero_fraction"});
  MetricsReport rep;
  const std::size_t cv = t.column("variant"), cs = t.column("scenario"), cm = t.column("mse"), ca = t.column("mape"),
                    ch = t.column("hours"), cz = t.column("zero_fraction");
  for (std::size_t r = 0; r < t.rows(); ++r) {
    MetricsRow row;
    row.variant = t.cell(r, cv);
    row.scenario = t.cell(r, cs);
    if (!t.cell(r, cm).empty()) row.mse = t.number(r, cm);
    if (!t.cell(r, ca).empty()) row.mape = t.number(r, ca);
    row.hours = static_cast<std::size_t>(t.number(r, ch));
    row.zero_fraction = t.number(r, cz);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

std::string MetricsReport::to_text() const {
  std::vector<std::string> variants;
  for (const auto& r : rows)
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);

  std::string out = "MAPE averages |pred - actual| / actual over entries with nonzero actual demand;\n"
                    "zero-demand entries are excluded (their share is the zero% column).\n\n";

  TextTable overall{{"model", "mse", "mape", "hours", "zero%"}, {}, {}};
  for (const auto& v : variants) {
    if (const auto* r = find(v, "all"))
      overall.add({v, fixed(r->mse, 3), fixed(r->mape, 3), std::to_string(r->hours),
                   fmt::format("{:.1f}", 100.0 * r->zero_fraction)});
  }
  if (!overall.body.empty()) out += overall.render("Overall performance");

  struct Family {
    char key;
    const char* title;
    std::vector<std::string> scenarios;
  };
  const std::vector<Family> families = {
      {'W', "Weather variants", {"hr=0", "hr>0", "dcr=0", "0<dcr<=1", "1<dcr<=3"}},
      {'I', "Car-flow variants", {"hr=0", "hr>0", "hr>1"}},
      {'T', "Time embedding", {"hr=0", "hr>0", "dcr=0"}},
  };
  for (const auto& fam : families) {
    std::vector<std::string> members;
    bool has_non_x = false;
    for (const auto& v : variants) {
      if (in_family(v, fam.key)) {
        members.push_back(v);
        has_non_x = has_non_x || v != "X";
      }
    }
    if (!has_non_x) continue;
    TextTable t{{"scenario", "model", "mse", "mape", "hours", "zero%"}, {}, {}};
    for (const auto& s : fam.scenarios) {
      bool first = true;
      for (const auto& v : members) {
        const auto* r = find(v, s);
        if (!r) continue;
        t.add({first ? s : "", v, fixed(r->mse, 3), fixed(r->mape, 3), std::to_string(r->hours),
               fmt::format("{:.1f}", 100.0 * r->zero_fraction)},
              first && !t.body.empty());
        first = false;
      }
    }
    if (!t.body.empty()) out += "\n" + t.render(fam.title);
  }
  return out;
}

}  // namespace bikeod::pipeline
