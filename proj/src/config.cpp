#include "bikeod/config.hpp"

#include <fmt/format.h>

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "bikeod/error.hpp"

namespace bikeod::config {

using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : sep) + s;
  return out;
}

/// Walks one JSON object, recording type and range errors under its key path.
class Reader {
 public:
  Reader(const json* obj, std::string path, std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {}

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void error(const std::string& key, const std::string& message) {
    errors_.push_back(fmt::format("{}: {}", key_path(key), message));
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key)) return nullptr;
    return &(*obj_)[key];
  }

  template <class Check>
  void number(const std::string& key, double& out, Check ok, const char* remedy) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_number()) return error(key, fmt::format("expected a number, got {}; {}", v->dump(), remedy));
    const double d = v->get<double>();
    if (!ok(d)) return error(key, fmt::format("{} is out of range; {}", v->dump(), remedy));
    out = d;
  }

  template <class Int, class Check>
  void integer(const std::string& key, Int& out, Check ok, const char* remedy) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_number_integer() || (std::is_unsigned_v<Int> && v->get<std::int64_t>() < 0 && !v->is_number_unsigned()))
      return error(key, fmt::format("expected an integer, got {}; {}", v->dump(), remedy));
    const auto i = v->get<Int>();
    if (!ok(i)) return error(key, fmt::format("{} is out of range; {}", v->dump(), remedy));
    out = i;
  }

  void boolean(const std::string& key, bool& out) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_boolean()) return error(key, fmt::format("expected true or false, got {}", v->dump()));
    out = v->get<bool>();
  }

  void string(const std::string& key, std::string& out) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_string()) return error(key, fmt::format("expected a string, got {}", v->dump()));
    out = v->get<std::string>();
  }

  void profile(const std::string& key, std::array<double, 24>& out) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_array() || v->size() != 24)
      return error(key, "expected an array of 24 non-negative numbers (one per hour)");
    std::array<double, 24> tmp{};
    for (std::size_t i = 0; i < 24; ++i) {
      if (!(*v)[i].is_number() || (*v)[i].get<double>() < 0)
        return error(key, fmt::format("entry {} must be a non-negative number", i));
      tmp[i] = (*v)[i].get<double>();
    }
    out = tmp;
  }

  Reader child(const std::string& key) {
    const json* v = find(key);
    if (v && !v->is_object()) {
      error(key, fmt::format("expected an object, got {}", v->dump()));
      v = nullptr;
    }
    return Reader(v, key_path(key), errors_);
  }

  /// Reports keys that were never asked for.
  void finish(const std::vector<std::string>& extra_hint = {}) {
    if (!obj_) return;
    for (const auto& [k, _] : obj_->items()) {
      if (seen_.count(k)) continue;
      std::vector<std::string> known(seen_.begin(), seen_.end());
      known.insert(known.end(), extra_hint.begin(), extra_hint.end());
      error(k, fmt::format("unknown key; expected one of: {}", join(known, ", ")));
    }
  }

 private:
  const json* obj_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

auto positive = [](double v) { return v > 0.0; };
auto non_negative = [](double v) { return v >= 0.0; };
auto any_size = [](std::size_t) { return true; };
auto at_least_one = [](std::size_t v) { return v >= 1; };

void read_synth(Reader r, synth::SynthConfig& s) {
  r.integer("grid", s.grid, [](std::size_t v) { return v >= 2; }, "use a grid side of at least 2");
  r.number("cell_size", s.cell_size, positive, "use a positive length in meters");
  r.integer("stations_per_zone", s.stations_per_zone, at_least_one, "use at least 1");
  r.string("start_date", s.start_date);
  r.integer("days", s.days, [](std::size_t v) { return v >= 9; }, "use at least 9 days (one week of lag history)");
  r.number("gravity_exponent", s.gravity_exponent, non_negative, "use a value >= 0");
  r.number("trips_per_hour", s.trips_per_hour, non_negative, "use a value >= 0");
  r.profile("weekday_profile", s.weekday_profile);
  r.profile("weekend_profile", s.weekend_profile);
  r.integer("holiday_start_day", s.holiday_start_day, any_size, "use a day offset >= 0");
  r.integer("holiday_days", s.holiday_days, any_size, "use a length >= 0");
  r.number("holiday_damping", s.holiday_damping, non_negative, "use a factor >= 0");
  Reader rain = r.child("rain");
  rain.number("episodes_per_day", s.rain.episodes_per_day, non_negative, "use a rate >= 0");
  rain.number("mean_duration_hours", s.rain.mean_duration_hours, [](double v) { return v >= 1.0; },
              "use a mean of at least 1 hour");
  rain.number("mean_intensity", s.rain.mean_intensity, positive, "use a positive mm/h value");
  rain.finish();
  r.number("beta", s.beta, non_negative, "use a value >= 0");
  r.number("recovery_share", s.recovery_share, non_negative, "use a value >= 0");
  r.number("substitution", s.substitution, non_negative, "use a value >= 0");
  r.integer("loops_per_zone", s.loops_per_zone, at_least_one, "use at least 1");
  r.number("flow_per_loop", s.flow_per_loop, non_negative, "use a value >= 0");
  r.number("flow_noise", s.flow_noise, non_negative, "use a value >= 0");
  r.number("corrupt_fraction", s.corrupt_fraction, [](double v) { return v >= 0 && v <= 1; },
           "use a fraction in [0, 1]");
  r.finish();
}

void read_model(Reader r, model::ModelConfig& m, std::vector<std::string>& errors) {
  r.integer("h_t", m.h_t, at_least_one, "use at least 1");
  r.integer("h_s", m.h_s, at_least_one, "use at least 1");
  r.integer("k_e", m.k_e, any_size, "use a block count >= 0");
  r.integer("k_d", m.k_d, any_size, "use a block count >= 0");
  std::string act(model::activation_name(m.activation)), cell(model::cell_name(m.cell));
  r.string("activation", act);
  r.string("cell", cell);
  try {
    m.activation = model::parse_activation(act);
  } catch (const std::invalid_argument& e) {
    errors.push_back(fmt::format("{}: {}", r.key_path("activation"), e.what()));
  }
  try {
    m.cell = model::parse_cell(cell);
  } catch (const std::invalid_argument& e) {
    errors.push_back(fmt::format("{}: {}", r.key_path("cell"), e.what()));
  }
  Reader e = r.child("embedding");
  e.integer("embed_width", m.embedding.embed_width, at_least_one, "use at least 1");
  e.integer("dense_width", m.embedding.dense_width, at_least_one, "use at least 1");
  e.integer("module_width_1", m.embedding.module_widths[0], at_least_one, "use at least 1");
  e.integer("module_width_2", m.embedding.module_widths[1], at_least_one, "use at least 1");
  e.integer("p", m.embedding.p, at_least_one, "use at least 1");
  e.finish();
  r.finish();
}

}  // namespace

bool DataPaths::synthetic() const {
  return zones.empty() && stations.empty() && trips.empty() && weather.empty() && calendar.empty() && loops.empty() &&
         loop_zones.empty();
}

ConfigError::ConfigError(std::vector<std::string> errors)
    : std::runtime_error("invalid configuration:\n  " + join(errors, "\n  ")), errors_(std::move(errors)) {}

RunConfig parse_config(const json& j) {
  std::vector<std::string> errors;
  RunConfig c;
  if (!j.is_object()) throw ConfigError({"<root>: expected a JSON object"});
  Reader r(&j, "", errors);

  r.integer("seed", c.seed, [](std::uint64_t) { return true; }, "use a non-negative integer");
  r.string("out_dir", c.out_dir);
  if (c.out_dir.empty()) r.error("out_dir", "must not be empty");

  Reader d = r.child("data");
  d.string("zones", c.data.zones);
  d.string("stations", c.data.stations);
  d.string("trips", c.data.trips);
  d.string("weather", c.data.weather);
  d.string("calendar", c.data.calendar);
  d.string("loops", c.data.loops);
  d.string("loop_zones", c.data.loop_zones);
  d.finish();
  if (!c.data.synthetic() && (c.data.zones.empty() || c.data.stations.empty() || c.data.trips.empty() ||
                              c.data.weather.empty() || c.data.calendar.empty())) {
    errors.push_back("data: zones, stations, trips, weather and calendar must all be set (or all left empty "
                     "to use the synthetic city)");
  }
  if (c.data.loops.empty() != c.data.loop_zones.empty())
    errors.push_back("data: loops and loop_zones must be given together");

  read_synth(r.child("synth"), c.synth);
  try {
    (void)parse_date(c.synth.start_date);
  } catch (const std::exception& e) {
    errors.push_back(fmt::format("synth.start_date: {}; use YYYY-MM-DD", e.what()));
  }

  Reader a = r.child("aggregation");
  a.integer("target_zones", c.target_zones, at_least_one, "use at least 1 zone");
  a.finish();

  r.number("p_bike", c.p_bike, [](double v) { return v > 0.0 && v <= 1.0; },
           "p_bike is a demand share in (0, 1], e.g. 0.6");

  Reader s = r.child("split");
  s.string("train_start", c.split.train_start);
  s.string("train_end", c.split.train_end);
  s.string("test_start", c.split.test_start);
  s.string("test_end", c.split.test_end);
  s.integer("test_days", c.split.test_days, at_least_one, "use at least 1 day");
  s.integer("first_hour", c.split.first_hour, [](int v) { return v >= 0 && v < 24; }, "use an hour in 0..23");
  s.integer("end_hour", c.split.end_hour, [](int v) { return v >= 1 && v <= 24; }, "use an hour in 1..24");
  s.finish();
  const int explicit_bounds = !c.split.train_start.empty() + !c.split.train_end.empty() + !c.split.test_start.empty() +
                              !c.split.test_end.empty();
  if (explicit_bounds != 0 && explicit_bounds != 4)
    errors.push_back("split: set all of train_start, train_end, test_start, test_end, or none of them");
  if (explicit_bounds == 4) {
    try {
      pipeline::SplitSpec spec{{parse_hour(c.split.train_start), parse_hour(c.split.train_end)},
                               {parse_hour(c.split.test_start), parse_hour(c.split.test_end)},
                               {c.split.first_hour, c.split.end_hour}};
      spec.validate();
    } catch (const std::exception& e) {
      errors.push_back(fmt::format("split: {}", e.what()));
    }
  }
  if (c.split.first_hour >= c.split.end_hour) errors.push_back("split: first_hour must be below end_hour");

  if (const json* v = r.find("variants")) {
    if (!v->is_array() || v->empty()) {
      r.error("variants", "expected a non-empty array of variant names");
    } else {
      std::vector<std::string> names;
      for (const auto& item : *v) {
        if (!item.is_string()) {
          r.error("variants", fmt::format("expected variant names, got {}", item.dump()));
          continue;
        }
        try {
          (void)features::feature_spec(item.get<std::string>());
          names.push_back(item.get<std::string>());
        } catch (const std::invalid_argument& e) {
          r.error("variants", e.what());
        }
      }
      c.variants = names;
    }
  }

  Reader t = r.child("train");
  t.number("lr", c.train.lr, positive, "use a positive learning rate such as 5e-5");
  t.number("decay", c.train.decay, non_negative, "use a value >= 0");
  t.number("dropout", c.train.dropout, [](double v) { return v >= 0 && v < 1; }, "use a rate in [0, 1)");
  t.integer("batch_size", c.train.batch_size, at_least_one, "use at least 1 timestamp per batch");
  t.integer("epochs", c.train.epochs, at_least_one, "use at least 1 epoch");
  t.finish();

  read_model(r.child("model"), c.model, errors);
  r.boolean("dump_predictions", c.dump_predictions);
  r.finish();

  if (!errors.empty()) throw ConfigError(std::move(errors));
  c.synth.seed = c.seed;
  c.train.seed = c.seed;
  c.model.dropout = c.train.dropout;
  return c;
}

RunConfig parse_config_text(const std::string& text) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return parse_config(json::object());
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError({fmt::format("<file>: not valid JSON ({})", e.what())});
  }
  return parse_config(j);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({fmt::format("{}: cannot read config file", path.string())});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

json to_json(const RunConfig& c) {
  const auto& s = c.synth;
  json synth = {{"grid", s.grid},
                {"cell_size", s.cell_size},
                {"stations_per_zone", s.stations_per_zone},
                {"start_date", s.start_date},
                {"days", s.days},
                {"gravity_exponent", s.gravity_exponent},
                {"trips_per_hour", s.trips_per_hour},
                {"weekday_profile", s.weekday_profile},
                {"weekend_profile", s.weekend_profile},
                {"holiday_start_day", s.holiday_start_day},
                {"holiday_days", s.holiday_days},
                {"holiday_damping", s.holiday_damping},
                {"rain",
                 {{"episodes_per_day", s.rain.episodes_per_day},
                  {"mean_duration_hours", s.rain.mean_duration_hours},
                  {"mean_intensity", s.rain.mean_intensity}}},
                {"beta", s.beta},
                {"recovery_share", s.recovery_share},
                {"substitution", s.substitution},
                {"loops_per_zone", s.loops_per_zone},
                {"flow_per_loop", s.flow_per_loop},
                {"flow_noise", s.flow_noise},
                {"corrupt_fraction", s.corrupt_fraction}};
  const auto& m = c.model;
  json model = {{"h_t", m.h_t},
                {"h_s", m.h_s},
                {"k_e", m.k_e},
                {"k_d", m.k_d},
                {"activation", model::activation_name(m.activation)},
                {"cell", model::cell_name(m.cell)},
                {"embedding",
                 {{"embed_width", m.embedding.embed_width},
                  {"dense_width", m.embedding.dense_width},
                  {"module_width_1", m.embedding.module_widths[0]},
                  {"module_width_2", m.embedding.module_widths[1]},
                  {"p", m.embedding.p}}}};
  return {{"seed", c.seed},
          {"out_dir", c.out_dir},
          {"data",
           {{"zones", c.data.zones},
            {"stations", c.data.stations},
            {"trips", c.data.trips},
            {"weather", c.data.weather},
            {"calendar", c.data.calendar},
            {"loops", c.data.loops},
            {"loop_zones", c.data.loop_zones}}},
          {"synth", synth},
          {"aggregation", {{"target_zones", c.target_zones}}},
          {"p_bike", c.p_bike},
          {"split",
           {{"train_start", c.split.train_start},
            {"train_end", c.split.train_end},
            {"test_start", c.split.test_start},
            {"test_end", c.split.test_end},
            {"test_days", c.split.test_days},
            {"first_hour", c.split.first_hour},
            {"end_hour", c.split.end_hour}}},
          {"variants", c.variants},
          {"train",
           {{"lr", c.train.lr},
            {"decay", c.train.decay},
            {"dropout", c.train.dropout},
            {"batch_size", c.train.batch_size},
            {"epochs", c.train.epochs}}},
          {"model", model},
          {"dump_predictions", c.dump_predictions}};
}

}  // namespace bikeod::config
