#include "bikeod/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fmt/core.h>

#include "bikeod/error.hpp"
#include "json.hpp"

namespace bikeod::model {

using ad::Var;
using features::kCalendarClasses;
using features::kCalendarFeatures;

std::string_view activation_name(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }
std::string_view cell_name(CellType c) { return c == CellType::Gru ? "gru" : "lstm"; }

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  throw std::invalid_argument(fmt::format("unknown activation '{}' (relu, tanh)", name));
}

CellType parse_cell(std::string_view name) {
  if (name == "gru") return CellType::Gru;
  if (name == "lstm") return CellType::Lstm;
  throw std::invalid_argument(fmt::format("unknown recurrent cell '{}' (gru, lstm)", name));
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw std::invalid_argument(fmt::format("model.{} must be positive", name));
  };
  positive(h_t, "h_t");
  positive(h_s, "h_s");
  positive(k_e, "k_e");
  positive(k_d, "k_d");
  positive(embedding.embed_width, "embedding.embed_width");
  positive(embedding.dense_width, "embedding.dense_width");
  positive(embedding.module_widths[0], "embedding.module_widths[0]");
  positive(embedding.module_widths[1], "embedding.module_widths[1]");
  if (variant.embedding) positive(embedding.p, "embedding.p");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw std::invalid_argument(fmt::format("model.dropout must be in [0, 1), got {}", dropout));
  }
}

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

ForecastModel init_params(const ModelConfig& config, std::size_t nodes, std::uint64_t seed) {
  config.validate();
  if (nodes == 0) throw std::invalid_argument("model needs at least one OD pair");
  ForecastModel m;
  m.config = config;
  m.nodes = nodes;
  Rng rng(seed);
  auto weight = [&](const std::string& name, std::size_t fan_in, std::size_t fan_out) {
    const double bound = glorot_bound(fan_in, fan_out);
    Tensor w(fan_in, fan_out);
    for (double& v : w.data()) v = (2.0 * uniform01(rng) - 1.0) * bound;
    m.params.add(name, std::move(w));
  };
  auto bias = [&](const std::string& name, std::size_t width) { m.params.add(name, Tensor(1, width)); };

  if (config.variant.embedding) {
    const auto& e = config.embedding;
    for (std::size_t i = 0; i < kCalendarFeatures; ++i) {
      weight(fmt::format("embed.table{}", i), kCalendarClasses[i], e.embed_width);
      weight(fmt::format("embed.dense{}.W", i), e.embed_width, e.dense_width);
      bias(fmt::format("embed.dense{}.b", i), e.dense_width);
    }
    const std::array<std::size_t, 4> widths = {kCalendarFeatures * e.dense_width, e.module_widths[0],
                                               e.module_widths[1], e.p};
    for (std::size_t l = 0; l < 3; ++l) {
      weight(fmt::format("embed.module{}.W", l), widths[l], widths[l + 1]);
      bias(fmt::format("embed.module{}.b", l), widths[l + 1]);
    }
  }

  const std::size_t h = config.h_t;
  const std::vector<std::string> gates =
      config.cell == CellType::Gru ? std::vector<std::string>{"z", "r", "n"} : std::vector<std::string>{"i", "f", "o", "g"};
  for (const auto& g : gates) {
    weight("temporal.W" + g, nodes, h);
    weight("temporal.U" + g, h, h);
    bias("temporal.b" + g, h);
  }

  auto block = [&](const std::string& prefix, std::size_t f_in, std::size_t f_out) {
    weight(prefix + ".W", 7 * f_in, f_out);
    bias(prefix + ".b", f_out);
    if (f_in != f_out) weight(prefix + ".P", f_in, f_out);
  };
  std::size_t f = config.input_width();
  for (std::size_t k = 0; k < config.k_e; ++k, f = config.h_s) block(fmt::format("enc{}", k), f, config.h_s);
  f = config.h_s + config.h_t;
  for (std::size_t k = 0; k < config.k_d; ++k, f = config.h_s) block(fmt::format("dec{}", k), f, config.h_s);
  weight("head.W", config.h_s, 1);
  bias("head.b", 1);
  return m;
}

// --- binder and dropout ------------------------------------------------------------------

Binder::Binder(ad::Tape& tape, const ad::ParameterSet& values, ad::ParameterSet* trainable)
    : tape_(tape), values_(values), trainable_(trainable) {}

Var Binder::operator()(const std::string& name) {
  if (auto it = cache_.find(name); it != cache_.end()) return it->second;
  const Var v = trainable_ ? tape_.parameter(trainable_->at(name)) : tape_.constant(values_.at(name).value);
  cache_.emplace(name, v);
  return v;
}

Var DropoutContext::apply(Var v) const {
  if (mode == Mode::Infer || rng == nullptr || rate == 0.0) return v;
  return ad::mask(v, dropout_mask(v.rows(), v.cols(), rate, *rng, mode));
}

// --- building blocks ------------------------------------------------------------------------

Var activate(Var v, Activation a) { return a == Activation::Relu ? ad::relu(v) : ad::tanh(v); }

Var embed_time(Binder& bind, const std::vector<Tensor>& one_hots, const DropoutContext& drop) {
  std::vector<Var> branches;
  for (std::size_t i = 0; i < one_hots.size(); ++i) {
    const Tensor& oh = one_hots[i];
    double total = 0.0;
    for (double v : oh.data()) {
      if (v != 0.0 && v != 1.0) throw DataError(fmt::format("calendar feature {} is not one-hot", i));
      total += v;
    }
    if (oh.rows() != 1 || total != 1.0) throw DataError(fmt::format("calendar feature {} is not one-hot", i));
    const Var e = ad::matmul(bind.tape().constant(oh), bind(fmt::format("embed.table{}", i)));
    const Var d = ad::add_bias(ad::matmul(e, bind(fmt::format("embed.dense{}.W", i))),
                               bind(fmt::format("embed.dense{}.b", i)));
    branches.push_back(ad::relu(d));
  }
  Var h = ad::concat_cols(branches);
  for (std::size_t l = 0; l < 3; ++l) {
    h = ad::add_bias(ad::matmul(h, bind(fmt::format("embed.module{}.W", l))), bind(fmt::format("embed.module{}.b", l)));
    if (l < 2) h = ad::relu(h);
    h = drop.apply(h);
  }
  return h;
}

Var tile_and_concat(Var x, std::optional<Var> e_t) {
  if (!e_t || e_t->cols() == 0) return x;
  return ad::concat_cols({x, ad::tile_rows(*e_t, x.rows())});
}

Var rmgc_forward(Binder& bind, const std::string& prefix, Var h, const GraphStack& stack, Activation activation) {
  if (stack.size() != 7) throw ShapeError(fmt::format("RMGC expects 7 adjacency matrices, got {}", stack.size()));
  if (stack.nodes() != h.rows()) {
    throw ShapeError(fmt::format("RMGC input has {} rows but the graphs have {} nodes", h.rows(), stack.nodes()));
  }
  const Var z = ad::graph_propagate(stack, h);
  const Var out = activate(ad::add_bias(ad::matmul(z, bind(prefix + ".W")), bind(prefix + ".b")), activation);
  const bool project = bind.tape().value(bind(prefix + ".W")).cols() != h.cols();
  const Var residual = project ? ad::matmul(h, bind(prefix + ".P")) : h;
  return ad::add(out, residual);
}

Var temporal_encode(Binder& bind, const std::vector<Var>& snapshots, CellType cell) {
  if (snapshots.empty()) throw ShapeError("temporal encoder needs at least one snapshot");
  const std::size_t h_t = bind.tape().value(bind(cell == CellType::Gru ? "temporal.Uz" : "temporal.Ui")).cols();
  Var h = bind.tape().constant(Tensor(1, h_t));
  Var c = h;
  auto gate = [&](Var x, Var state, const std::string& g) {
    return ad::add_bias(ad::add(ad::matmul(x, bind("temporal.W" + g)), ad::matmul(state, bind("temporal.U" + g))),
                        bind("temporal.b" + g));
  };
  for (const Var& x : snapshots) {
    if (x.rows() != 1) throw ShapeError("temporal snapshots must be row vectors");
    if (cell == CellType::Gru) {
      const Var z = ad::sigmoid(gate(x, h, "z"));
      const Var r = ad::sigmoid(gate(x, h, "r"));
      const Var n = ad::tanh(gate(x, ad::mul(r, h), "n"));
      h = ad::add(n, ad::mul(z, ad::sub(h, n)));  // (1 - z) n + z h
    } else {
      const Var i = ad::sigmoid(gate(x, h, "i"));
      const Var f = ad::sigmoid(gate(x, h, "f"));
      const Var o = ad::sigmoid(gate(x, h, "o"));
      const Var g = ad::tanh(gate(x, h, "g"));
      c = ad::add(ad::mul(f, c), ad::mul(i, g));
      h = ad::mul(o, ad::tanh(c));
    }
  }
  return h;
}

Var model_forward(Binder& bind, const ForecastModel& model, const Tensor& x, const features::CalendarEncoding& encoding,
                  const GraphStack& stack, const DropoutContext& drop) {
  const auto& cfg = model.config;
  if (x.rows() != model.nodes || x.cols() != cfg.variant.width()) {
    throw ShapeError(fmt::format("variant {} expects features [{}x{}], got {}", cfg.variant.variant, model.nodes,
                                 cfg.variant.width(), shape_string(x)));
  }
  ad::Tape& tape = bind.tape();
  const Var xv = tape.constant(x);

  std::optional<Var> e_t;
  if (cfg.variant.embedding) {
    features::validate_encoding(encoding);
    std::vector<Tensor> one_hots;
    for (std::size_t i = 0; i < kCalendarFeatures; ++i) one_hots.push_back(encoding.one_hot(i));
    e_t = embed_time(bind, one_hots, drop);
  }

  Var h = tile_and_concat(xv, e_t);
  for (std::size_t k = 0; k < cfg.k_e; ++k) {
    h = drop.apply(rmgc_forward(bind, fmt::format("enc{}", k), h, stack, cfg.activation));
  }

  std::vector<Var> snapshots;
  for (std::size_t k = 0; k < features::kLagOffsets.size(); ++k) {
    snapshots.push_back(ad::transpose(ad::slice_cols(xv, k, k + 1)));
  }
  const Var temporal = temporal_encode(bind, snapshots, cfg.cell);

  Var d = ad::concat_cols({h, ad::tile_rows(temporal, model.nodes)});
  for (std::size_t k = 0; k < cfg.k_d; ++k) {
    d = drop.apply(rmgc_forward(bind, fmt::format("dec{}", k), d, stack, cfg.activation));
  }
  return ad::add_bias(ad::matmul(d, bind("head.W")), bind("head.b"));
}

// --- tensor-level conveniences -------------------------------------------------------

Tensor tile_and_concat(const Tensor& x, const Tensor& e_t) {
  if (e_t.size() == 0) return x;
  if (e_t.rows() != 1) throw ShapeError("tile_and_concat: E_T must be a row vector, got " + shape_string(e_t));
  Tensor out(x.rows(), x.cols() + e_t.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c);
    for (std::size_t c = 0; c < e_t.cols(); ++c) out(r, x.cols() + c) = e_t(0, c);
  }
  return out;
}

Tensor rmgc_forward(const RMGCBlock& block, const Tensor& h, const GraphStack& stack, Activation activation) {
  ad::ParameterSet ps;
  ps.add("blk.W", block.weight);
  ps.add("blk.b", block.bias);
  if (block.projection.size() != 0) ps.add("blk.P", block.projection);
  if (block.weight.rows() != stack.size() * h.cols()) {
    throw ShapeError(fmt::format("RMGC weight {} does not match {} graphs x {} input columns",
                                 shape_string(block.weight), stack.size(), h.cols()));
  }
  if (block.projection.size() == 0 && block.weight.cols() != h.cols()) {
    throw ShapeError("RMGC block changes width but has no residual projection");
  }
  ad::Tape tape;
  Binder bind(tape, ps);
  return rmgc_forward(bind, "blk", tape.constant(h), stack, activation).value();
}

Tensor embed_time(const ForecastModel& model, const features::CalendarEncoding& encoding) {
  if (!model.config.variant.embedding) return Tensor(1, 0);
  features::validate_encoding(encoding);
  ad::Tape tape;
  Binder bind(tape, model.params);
  std::vector<Tensor> one_hots;
  for (std::size_t i = 0; i < kCalendarFeatures; ++i) one_hots.push_back(encoding.one_hot(i));
  return embed_time(bind, one_hots, DropoutContext{}).value();
}

Tensor predict(const ForecastModel& model, const Tensor& raw_x, const features::CalendarEncoding& encoding,
               const GraphStack& stack) {
  ad::Tape tape;
  Binder bind(tape, model.params);
  const Tensor x = model.scaler.mean.empty() ? raw_x : model.scaler.apply(raw_x);
  Tensor y = model_forward(bind, model, x, encoding, stack, DropoutContext{}).value();
  for (double& v : y.data()) v = std::max(0.0, v);
  return y;
}

// --- checkpoints ----------------------------------------------------------------------

namespace {

constexpr int kCheckpointVersion = 1;

nlohmann::json spec_json(const features::FeatureSpec& s) {
  nlohmann::json w = nlohmann::json::array();
  for (const auto& t : s.weather_terms) w.push_back({{"signal", features::signal_name(t.signal)}, {"offset", t.offset}});
  return {{"variant", s.variant}, {"weather_terms", w}, {"flow_terms", s.flow_terms}, {"embedding", s.embedding}};
}

}  // namespace

std::string checkpoint_json(const ForecastModel& model) {
  const auto& c = model.config;
  nlohmann::json j;
  j["format"] = "bikeod-forecast-model";
  j["version"] = kCheckpointVersion;
  j["nodes"] = model.nodes;
  j["config"] = {{"h_t", c.h_t},
                 {"h_s", c.h_s},
                 {"k_e", c.k_e},
                 {"k_d", c.k_d},
                 {"activation", activation_name(c.activation)},
                 {"cell", cell_name(c.cell)},
                 {"dropout", c.dropout},
                 {"embedding",
                  {{"embed_width", c.embedding.embed_width},
                   {"dense_width", c.embedding.dense_width},
                   {"module_widths", c.embedding.module_widths},
                   {"p", c.embedding.p}}}};
  j["variant"] = spec_json(c.variant);
  j["scaler"] = {{"mean", model.scaler.mean}, {"scale", model.scaler.scale}};
  for (const auto& p : model.params) {
    j["params"].push_back({{"name", p.name},
                           {"rows", p.value.rows()},
                           {"cols", p.value.cols()},
                           {"data", std::vector<double>(p.value.data().begin(), p.value.data().end())}});
  }
  return j.dump();
}

ForecastModel parse_checkpoint(const std::string& text, const std::string& source) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "bikeod-forecast-model") throw DataError(fmt::format("{}: not a model checkpoint", source));
    if (j.at("version") != kCheckpointVersion) {
      throw DataError(fmt::format("{}: unsupported checkpoint version {}", source, j.at("version").dump()));
    }
    ModelConfig c;
    const auto& jc = j.at("config");
    c.h_t = jc.at("h_t");
    c.h_s = jc.at("h_s");
    c.k_e = jc.at("k_e");
    c.k_d = jc.at("k_d");
    c.activation = parse_activation(jc.at("activation").get<std::string>());
    c.cell = parse_cell(jc.at("cell").get<std::string>());
    c.dropout = jc.at("dropout");
    c.embedding.embed_width = jc.at("embedding").at("embed_width");
    c.embedding.dense_width = jc.at("embedding").at("dense_width");
    c.embedding.module_widths = jc.at("embedding").at("module_widths");
    c.embedding.p = jc.at("embedding").at("p");
    const auto& jv = j.at("variant");
    c.variant = features::feature_spec(jv.at("variant").get<std::string>());
    // the stored terms must agree with the roster entry
    if (spec_json(c.variant) != jv) throw DataError(fmt::format("{}: variant terms do not match the roster", source));

    ForecastModel m = init_params(c, j.at("nodes"), 0);
    m.scaler.mean = j.at("scaler").at("mean").get<std::vector<double>>();
    m.scaler.scale = j.at("scaler").at("scale").get<std::vector<double>>();
    const auto& params = j.at("params");
    if (params.size() != m.params.size()) {
      throw DataError(fmt::format("{}: expected {} parameters, found {}", source, m.params.size(), params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = m.params[i];
      const auto& jp = params[i];
      if (jp.at("name") != p.name || jp.at("rows") != p.value.rows() || jp.at("cols") != p.value.cols()) {
        throw DataError(fmt::format("{}: parameter {} ('{}') does not match the configured architecture", source, i,
                                    jp.at("name").get<std::string>()));
      }
      p.value = Tensor(p.value.rows(), p.value.cols(), jp.at("data").get<std::vector<double>>());
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("{}: malformed checkpoint: {}", source, e.what()));
  } catch (const std::invalid_argument& e) {
    throw DataError(fmt::format("{}: {}", source, e.what()));
  }
}

void save_checkpoint(const std::filesystem::path& path, const ForecastModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << checkpoint_json(model) << '\n';
}

ForecastModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open model checkpoint {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), path.string());
}

}  // namespace bikeod::model
