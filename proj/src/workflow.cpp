#include "bikeod/workflow.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <algorithm>
#include <exception>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "bikeod/csv.hpp"
#include "bikeod/error.hpp"
#include "bikeod/graphs.hpp"
#include "bikeod/omp.hpp"

namespace bikeod::workflow {

namespace fs = std::filesystem;
using config::RunConfig;
using nlohmann::json;

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"synth", "aggregate", "graphs", "featurize", "train", "eval", "report"};
  return names;
}

namespace {

std::string hex(const unsigned char* d, unsigned n) {
  std::string out;
  for (unsigned i = 0; i < n; ++i) out += fmt::format("{:02x}", d[i]);
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << text;
}

}  // namespace

std::string text_digest(std::string_view text) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 digest failed");
  return hex(md, len);
}

std::string file_digest(const fs::path& path) { return text_digest(read_file(path)); }

namespace {

std::size_t stage_index(std::string_view stage) {
  const auto& names = stage_names();
  const auto it = std::find(names.begin(), names.end(), stage);
  if (it == names.end()) {
    throw std::invalid_argument(fmt::format("unknown stage '{}'; expected one of: {}", stage, fmt::join(names, ", ")));
  }
  return static_cast<std::size_t>(it - names.begin());
}

/// Config keys each stage depends on, cumulative over the chain.
std::string stage_config_hash(const RunConfig& cfg, std::size_t stage) {
  const json full = config::to_json(cfg);
  static const std::vector<std::vector<std::string>> keys = {
      {"seed", "data", "synth"}, {"aggregation"}, {"p_bike", "split"}, {}, {"variants", "train", "model"},
      {"dump_predictions"},      {}};
  json subset = json::object();
  for (std::size_t s = 0; s <= stage; ++s)
    for (const auto& k : keys[s]) subset[k] = full.at(k);
  return text_digest(subset.dump());
}

class Stage {
 public:
  Stage(std::string_view name, const RunConfig& cfg, std::ostream& log)
      : name_(name), index_(stage_index(name)), cfg_(cfg), out_(cfg.out_dir), log_(log) {
    const fs::path m = out_ / "manifest.json";
    if (fs::exists(m)) {
      try {
        manifest_ = json::parse(read_file(m));
      } catch (const json::exception& e) {
        throw DataError(fmt::format("{}: corrupt run manifest ({})", m.string(), e.what()));
      }
    } else {
      manifest_ = {{"stages", json::object()}};
    }
    entry_ = {{"stage", name_},
              {"config_hash", stage_config_hash(cfg, index_)},
              {"inputs", json::object()},
              {"outputs", json::object()}};
  }

  const RunConfig& cfg() const { return cfg_; }
  std::ostream& log() { return log_; }
  fs::path dir() const { return out_ / name_; }

  /// Artifact produced by an earlier stage, verified against the manifest.
  fs::path upstream(const std::string& producer, const std::string& rel) {
    const auto& stages = manifest_["stages"];
    if (!stages.contains(producer)) {
      throw MissingArtifact(fmt::format("stage `{}` needs {} from stage `{}`, which has not run in {}; run "
                                        "`bikeod {}` first",
                                        name_, rel, producer, out_.string(), producer));
    }
    const auto& rec = stages[producer];
    if (rec.at("config_hash") != stage_config_hash(cfg_, stage_index(producer))) {
      throw StaleArtifact(fmt::format("configuration changed since stage `{}` ran; rerun `bikeod {}` before `{}`",
                                      producer, producer, name_));
    }
    const fs::path path = out_ / rel;
    if (!rec.at("outputs").contains(rel) || !fs::exists(path)) {
      throw MissingArtifact(fmt::format("stage `{}` needs {}, which stage `{}` did not produce; rerun `bikeod {}`",
                                        name_, rel, producer, producer));
    }
    const std::string digest = file_digest(path);
    if (rec["outputs"][rel] != digest) {
      throw StaleArtifact(fmt::format("{} was modified after stage `{}` wrote it (digest mismatch); rerun `bikeod {}`",
                                      path.string(), producer, producer));
    }
    entry_["inputs"][rel] = digest;
    return path;
  }

  bool has_upstream_output(const std::string& producer, const std::string& rel) const {
    const auto& stages = manifest_["stages"];
    return stages.contains(producer) && stages[producer]["outputs"].contains(rel);
  }

  /// External input file named by a config key.
  fs::path external(const std::string& key, const std::string& path) {
    if (!fs::exists(path)) throw DataError(fmt::format("{}: file not found: {}", key, path));
    entry_["inputs"][path] = file_digest(path);
    return path;
  }

  /// Input that is either an external file or a synth output.
  fs::path source(const std::string& key, const std::string& configured, const std::string& synth_file) {
    if (!configured.empty()) return external("data." + key, configured);
    return upstream("synth", "synth/" + synth_file);
  }

  void begin() {
    fs::remove_all(dir());
    fs::create_directories(dir());
  }

  void output(const fs::path& path) {
    const std::string rel = fs::relative(path, out_).generic_string();
    entry_["outputs"][rel] = file_digest(path);
  }

  void write(const std::string& rel_in_stage, const std::string& text) {
    const fs::path p = dir() / rel_in_stage;
    write_file(p, text);
    output(p);
  }

  void commit() {
    auto& stages = manifest_["stages"];
    const bool changed = !stages.contains(name_) || stages[name_]["outputs"] != entry_["outputs"];
    stages[name_] = entry_;
    if (changed) {
      // later stages were built from the previous outputs
      for (std::size_t s = index_ + 1; s < stage_names().size(); ++s) stages.erase(stage_names()[s]);
    }
    manifest_["config"] = config::to_json(cfg_);
    write_file(out_ / "manifest.json", manifest_.dump(2) + "\n");
  }

 private:
  std::string name_;
  std::size_t index_;
  const RunConfig& cfg_;
  fs::path out_;
  std::ostream& log_;
  json manifest_;
  json entry_;
};

// --- shared loaders ------------------------------------------------------------------------

struct Horizon {
  HourGrid grid;
  pipeline::SplitSpec split;
};

Horizon make_horizon(const RunConfig& cfg, const features::Calendar& calendar) {
  Horizon h;
  h.split.test_hours = {cfg.split.first_hour, cfg.split.end_hour};
  if (!cfg.split.train_start.empty()) {
    h.split.train = {parse_hour(cfg.split.train_start), parse_hour(cfg.split.train_end)};
    h.split.test = {parse_hour(cfg.split.test_start), parse_hour(cfg.split.test_end)};
    const Hour begin = std::min(h.split.train.begin, h.split.test.begin);
    const Hour end = std::max(h.split.train.end, h.split.test.end);
    h.grid = {begin, static_cast<std::size_t>(end - begin)};
  } else {
    if (calendar.empty()) throw DataError("calendar is empty; cannot derive the data horizon");
    const Hour begin = start_of(calendar.begin()->first);
    const Hour end = start_of(calendar.rbegin()->first) + 24;
    const auto days = static_cast<std::size_t>((end - begin) / 24);
    if (cfg.split.test_days + 8 > days) {
      throw DataError(fmt::format("split.test_days = {} leaves fewer than 8 training days out of {}; lower it",
                                  cfg.split.test_days, days));
    }
    const Hour test_begin = end - static_cast<std::int64_t>(24 * cfg.split.test_days);
    h.split.train = {begin, test_begin};
    h.split.test = {test_begin, end};
    h.grid = {begin, static_cast<std::size_t>(end - begin)};
  }
  h.split.validate();
  return h;
}

std::string panel_csv(const ODDemandPanel& p) {
  std::string out = "ts";
  for (std::size_t k = 0; k < p.size(); ++k) out += fmt::format(",{}", k);
  out += '\n';
  for (std::size_t i = 0; i < p.grid.count; ++i) {
    out += format_hour(p.grid.at(i));
    for (std::size_t k = 0; k < p.size(); ++k) out += "," + format_number(p.demand(i, k));
    out += '\n';
  }
  return out;
}

ODDemandPanel read_panel(const fs::path& path, std::vector<ODPair> od_pairs) {
  const CsvTable t = CsvTable::read(path);
  if (t.header().size() != od_pairs.size() + 1) throw DataError(fmt::format("{}: column count mismatch", path.string()));
  ODDemandPanel p;
  p.od_pairs = std::move(od_pairs);
  if (t.rows() == 0) throw DataError(fmt::format("{}: no rows", path.string()));
  p.grid = {parse_hour(t.cell(0, 0)), t.rows()};
  p.demand = Tensor(t.rows(), p.size());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    if (parse_hour(t.cell(r, 0)) != p.grid.at(r)) throw DataError(fmt::format("{}: hours not contiguous", path.string()));
    for (std::size_t k = 0; k < p.size(); ++k) p.demand(r, k) = t.number(r, k + 1);
  }
  return p;
}

std::string flows_csv(const features::ZoneFlowSeries& f) {
  std::string out = "ts";
  for (const auto& z : f.zones) out += "," + z;
  out += '\n';
  for (std::size_t i = 0; i < f.grid.count; ++i) {
    out += format_hour(f.grid.at(i));
    for (std::size_t z = 0; z < f.zones.size(); ++z) out += "," + format_number(f.flow(i, z));
    out += '\n';
  }
  return out;
}

features::ZoneFlowSeries read_flows(const fs::path& path) {
  const CsvTable t = CsvTable::read(path);
  features::ZoneFlowSeries f;
  f.zones.assign(t.header().begin() + 1, t.header().end());
  if (t.rows() == 0) throw DataError(fmt::format("{}: no rows", path.string()));
  f.grid = {parse_hour(t.cell(0, 0)), t.rows()};
  f.flow = Tensor(t.rows(), f.zones.size());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t z = 0; z < f.zones.size(); ++z) f.flow(r, z) = t.number(r, z + 1);
  return f;
}

std::string weather_csv(const features::WeatherSeries& w) {
  std::string out = "ts,hr,hd\n";
  for (std::size_t i = 0; i < w.grid.count; ++i)
    out += fmt::format("{},{},{}\n", format_hour(w.grid.at(i)), format_number(w.hr[i]), format_number(w.hd[i]));
  return out;
}

json scaler_json(const features::Standardizer& s, std::size_t samples) {
  return {{"mean", s.mean}, {"scale", s.scale}, {"train_samples", samples}};
}

/// Everything train and eval need, read from graphs/ and features/.
struct Prepared {
  geo::ZonePartition partition;
  std::vector<ODPair> od_pairs;
  GraphStack stack;
  ODDemandPanel panel;
  features::WeatherSeries weather;
  std::optional<features::ZoneFlowSeries> flows;
  features::Calendar calendar;
  json scalers;
  Horizon horizon;
};

Prepared load_prepared(Stage& st) {
  Prepared p;
  for (std::size_t k = 0; k < graphs::kStackSize; ++k) {
    const std::string name(graphs::kMatrixNames[k]);
    st.upstream("graphs", "graphs/" + name + ".csv");
    st.upstream("graphs", "graphs/" + name + "_norm.csv");
  }
  const fs::path gman = st.upstream("graphs", "graphs/manifest.json");
  p.stack = graphs::load_stack(gman.parent_path(), &p.od_pairs).graph_stack();
  p.panel = read_panel(st.upstream("graphs", "graphs/demand.csv"), p.od_pairs);
  p.calendar = features::load_calendar(st.upstream("featurize", "featurize/calendar.csv"));
  p.horizon = make_horizon(st.cfg(), p.calendar);
  p.weather = features::load_weather(st.upstream("featurize", "featurize/weather.csv"), p.horizon.grid);
  if (st.has_upstream_output("featurize", "featurize/flows.csv"))
    p.flows = read_flows(st.upstream("featurize", "featurize/flows.csv"));
  p.scalers = json::parse(read_file(st.upstream("featurize", "featurize/scalers.json")));
  return p;
}

features::Standardizer scaler_from(const json& j) {
  features::Standardizer s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.scale = j.at("scale").get<std::vector<double>>();
  return s;
}

std::uint64_t variant_seed(std::uint64_t seed, const std::string& variant) {
  const auto& names = features::variant_names();
  const auto idx = static_cast<std::uint64_t>(std::find(names.begin(), names.end(), variant) - names.begin());
  return synth::derive_seed(seed, 100, idx);
}

// --- stages --------------------------------------------------------------------------------

void stage_synth(Stage& st) {
  const auto& cfg = st.cfg();
  if (!cfg.data.synthetic()) {
    throw std::invalid_argument("data paths are configured; the synth stage only runs when every data.* path is empty");
  }
  st.begin();
  const auto data = synth::generate_all(cfg.synth);
  for (const auto& p : synth::write_dataset(st.dir(), cfg.synth, data)) st.output(p);
  st.log() << fmt::format("synth: {} zones, {} days, {} trips, {} rain episodes\n", data.city.partition.size(),
                          cfg.synth.days, static_cast<std::size_t>(data.demand.counts.total()),
                          data.weather.episodes.size());
}

void stage_aggregate(Stage& st) {
  const auto& cfg = st.cfg();
  const auto zones_path = st.source("zones", cfg.data.zones, "zones.geojson");
  const auto partition = geo::load_partition(zones_path);
  st.begin();
  geo::ZonePartition out = partition;
  if (cfg.target_zones < partition.size()) {
    out = geo::aggregate_to(partition, cfg.target_zones);
    st.log() << fmt::format("aggregate: {} -> {} zones\n", partition.size(), out.size());
  } else {
    st.log() << fmt::format("aggregate: {} zones already at or below the target of {}; kept as is\n",
                            partition.size(), cfg.target_zones);
  }
  st.write("zones.geojson", geo::partition_to_geojson(out));
  st.write("merge_tree.json", geo::merge_tree_json(out));
}

void stage_graphs(Stage& st) {
  const auto& cfg = st.cfg();
  const auto partition = geo::load_partition(st.upstream("aggregate", "aggregate/zones.geojson"));
  const auto stations = geo::load_stations(st.source("stations", cfg.data.stations, "stations.csv"));
  const auto calendar = features::load_calendar(st.source("calendar", cfg.data.calendar, "calendar.csv"));
  auto trips = features::load_trips(st.source("trips", cfg.data.trips, "trips.csv"));
  const Horizon h = make_horizon(cfg, calendar);
  std::erase_if(trips, [&](const features::Trip& t) { return !h.grid.contains(t.departure); });

  const auto full = features::trips_to_panel(trips, stations, partition, h.grid);
  const auto train_panel = full.window(h.split.train.begin, h.split.train.end);
  const auto top = features::filter_top_ods(train_panel, cfg.p_bike, {cfg.split.first_hour, cfg.split.end_hour});
  const auto panel = features::restrict_panel(full, top);
  const auto stack =
      graphs::build_stack(panel.od_pairs, partition, panel.window(h.split.train.begin, h.split.train.end));

  st.begin();
  graphs::save_stack(st.dir(), stack, panel.od_pairs);
  for (const auto& e : fs::directory_iterator(st.dir())) st.output(e.path());
  st.write("demand.csv", panel_csv(panel));
  st.log() << fmt::format("graphs: {} of {} OD pairs carry {:.0f}% of train demand (p_bike = {})\n", panel.size(),
                          full.size(), 100.0 * cfg.p_bike, cfg.p_bike);
}

void stage_featurize(Stage& st) {
  const auto& cfg = st.cfg();
  const auto partition = geo::load_partition(st.upstream("aggregate", "aggregate/zones.geojson"));
  std::vector<ODPair> od_pairs;
  st.upstream("graphs", "graphs/manifest.json");
  graphs::load_stack(fs::path(cfg.out_dir) / "graphs", &od_pairs);
  const auto panel = read_panel(st.upstream("graphs", "graphs/demand.csv"), od_pairs);
  const auto calendar_all = features::load_calendar(st.source("calendar", cfg.data.calendar, "calendar.csv"));
  const Horizon h = make_horizon(cfg, calendar_all);
  const auto weather = features::load_weather(st.source("weather", cfg.data.weather, "weather.csv"), h.grid);

  std::optional<features::ZoneFlowSeries> flows;
  const bool have_loops = cfg.data.synthetic() || !cfg.data.loops.empty();
  if (have_loops) {
    const auto records = features::load_loop_records(st.source("loops", cfg.data.loops, "loops.csv"));
    const auto loop_zone = features::load_loop_zones(st.source("loop_zones", cfg.data.loop_zones, "loop_zones.csv"));
    std::map<std::string, std::string> member_of;
    for (const auto& z : partition.zones())
      for (const auto& m : z.members) member_of[m] = z.id;
    std::map<std::string, std::string> loop_to_zone;
    for (const auto& [loop, zone] : loop_zone) {
      const auto it = member_of.find(zone);
      if (it == member_of.end()) throw DataError(fmt::format("loop {} maps to unknown zone {}", loop, zone));
      loop_to_zone[loop] = it->second;
    }
    std::vector<std::string> origins;
    for (const auto& od : od_pairs) origins.push_back(od.origin);
    std::sort(origins.begin(), origins.end());
    origins.erase(std::unique(origins.begin(), origins.end()), origins.end());
    flows = features::aggregate_flow_by_zone(features::clean_loop_data(records), loop_to_zone, origins, h.grid);
  }

  features::Calendar calendar;
  for (const auto& [d, day] : calendar_all)
    if (h.grid.contains(start_of(d))) calendar[d] = day;

  json scalers = json::object();
  for (const auto& v : features::variant_names()) {
    const auto spec = features::feature_spec(v);
    if (spec.uses_flow() && !flows) continue;
    const auto ds = pipeline::build_dataset(spec, panel, &weather, flows ? &*flows : nullptr, calendar,
                                            h.split.train_timestamps());
    if (ds.samples.empty()) throw DataError(fmt::format("variant {} has no training samples", v));
    std::vector<features::FeatureMatrix> mats;
    for (const auto& s : ds.samples) mats.push_back({s.t, s.x});
    scalers[v] = scaler_json(features::Standardizer::fit(mats), ds.samples.size());
  }

  st.begin();
  st.write("weather.csv", weather_csv(weather));
  if (flows) st.write("flows.csv", flows_csv(*flows));
  features::save_calendar(st.dir() / "calendar.csv", calendar);
  st.output(st.dir() / "calendar.csv");
  st.write("scalers.json", scalers.dump(1) + "\n");
  st.log() << fmt::format("featurize: {} hours, {} OD pairs, scalers for {} variants{}\n", h.grid.count,
                          od_pairs.size(), scalers.size(), flows ? "" : " (no loop data: I variants unavailable)");
}

features::FeatureSpec checked_spec(const Prepared& p, const std::string& v) {
  const auto spec = features::feature_spec(v);
  if (!p.scalers.contains(v)) {
    throw DataError(fmt::format("variant {} needs car-flow data; set data.loops and data.loop_zones", v));
  }
  return spec;
}

void stage_train(Stage& st) {
  const auto& cfg = st.cfg();
  const Prepared p = load_prepared(st);
  const auto& variants = cfg.variants;
  std::vector<pipeline::TrainResult> results(variants.size());
  std::vector<std::exception_ptr> errors(variants.size());
  for (const auto& v : variants) (void)checked_spec(p, v);

#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(variants.size()); ++i) {
    try {
      const auto& v = variants[i];
      const auto spec = checked_spec(p, v);
      const auto data = pipeline::build_dataset(spec, p.panel, &p.weather, p.flows ? &*p.flows : nullptr, p.calendar,
                                                p.horizon.split.train_timestamps());
      model::ModelConfig mc = cfg.model;
      mc.variant = spec;
      mc.dropout = cfg.train.dropout;
      const std::uint64_t seed = variant_seed(cfg.seed, v);
      auto m = model::init_params(mc, p.panel.size(), seed);
      m.scaler = scaler_from(p.scalers[v]);
      pipeline::TrainConfig tc = cfg.train;
      tc.seed = seed;
      results[i] = pipeline::train(std::move(m), data, p.stack, tc);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  st.begin();
  for (std::size_t i = 0; i < variants.size(); ++i) {
    st.write(variants[i] + ".json", model::checkpoint_json(results[i].model));
    std::string curve = "epoch,loss\n";
    for (std::size_t e = 0; e < results[i].loss_curve.size(); ++e)
      curve += fmt::format("{},{}\n", e + 1, format_number(results[i].loss_curve[e]));
    st.write(variants[i] + "_loss.csv", curve);
    st.log() << fmt::format("train: {:<4} loss {:.4f} -> {:.4f} over {} epochs\n", variants[i],
                            results[i].loss_curve.front(), results[i].loss_curve.back(), results[i].loss_curve.size());
  }
}

void stage_eval(Stage& st) {
  const auto& cfg = st.cfg();
  const Prepared p = load_prepared(st);
  std::vector<model::ForecastModel> models;
  std::vector<pipeline::Dataset> tests;
  for (const auto& v : cfg.variants) {
    const auto spec = checked_spec(p, v);
    models.push_back(model::parse_checkpoint(read_file(st.upstream("train", "train/" + v + ".json")), v + ".json"));
    if (models.back().config.variant != spec)
      throw StaleArtifact(fmt::format("checkpoint train/{}.json holds variant {}", v, models.back().config.variant.variant));
    tests.push_back(pipeline::build_dataset(spec, p.panel, &p.weather, p.flows ? &*p.flows : nullptr, p.calendar,
                                            p.horizon.split.test_timestamps()));
  }
  std::vector<pipeline::VariantRun> runs;
  for (std::size_t i = 0; i < models.size(); ++i) runs.push_back({&models[i], &tests[i]});
  const auto report = pipeline::evaluate(runs, p.stack, p.weather);

  st.begin();
  st.write("metrics.csv", report.to_csv());
  if (cfg.dump_predictions) {
    for (std::size_t i = 0; i < models.size(); ++i) {
      std::ostringstream ss;
      pipeline::write_predictions(ss, pipeline::predict_dataset(models[i], tests[i], p.stack));
      st.write("predictions_" + cfg.variants[i] + ".csv", ss.str());
    }
  }
  st.log() << fmt::format("eval: {} variants on {} test hours\n", models.size(),
                          tests.empty() ? 0 : tests.front().samples.size());
}

void stage_report(Stage& st) {
  const auto report = pipeline::MetricsReport::from_csv(read_file(st.upstream("eval", "eval/metrics.csv")));
  st.begin();
  const std::string text = report.to_text();
  st.write("report.txt", text);
  st.write("report.csv", report.to_csv());
  st.log() << text;
}

}  // namespace

void run_stage(std::string_view name, const RunConfig& cfg, std::ostream& log) {
  Stage st(name, cfg, log);
  switch (stage_index(name)) {
    case 0: stage_synth(st); break;
    case 1: stage_aggregate(st); break;
    case 2: stage_graphs(st); break;
    case 3: stage_featurize(st); break;
    case 4: stage_train(st); break;
    case 5: stage_eval(st); break;
    case 6: stage_report(st); break;
  }
  st.commit();
}

void run_all(const RunConfig& cfg, std::ostream& log) {
  for (const auto& s : stage_names()) {
    if (s == "synth" && !cfg.data.synthetic()) continue;
    run_stage(s, cfg, log);
  }
}

}  // namespace bikeod::workflow
