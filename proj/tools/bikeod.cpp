// bikeod: runs the forecasting workflow stage by stage from one config file.

#include <fmt/format.h>

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "bikeod/config.hpp"
#include "bikeod/error.hpp"
#include "bikeod/workflow.hpp"

using bikeod::config::ConfigError;
using nlohmann::json;

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::vector<std::string> variants;
};

bikeod::config::RunConfig resolve(const Overrides& o) {
  json j = json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw ConfigError({fmt::format("{}: cannot read config file", o.config_path)});
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
      try {
        j = json::parse(text);
      } catch (const json::parse_error& e) {
        throw ConfigError({fmt::format("{}: not valid JSON ({})", o.config_path, e.what())});
      }
    }
  }
  if (!j.is_object()) throw ConfigError({"<root>: expected a JSON object"});
  // flags act as config keys so they go through the same validation
  if (o.seed) j["seed"] = *o.seed;
  if (o.out_dir) j["out_dir"] = *o.out_dir;
  if (!o.variants.empty()) j["variants"] = o.variants;
  return bikeod::config::parse_config(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bike-sharing OD demand forecasting under weather and car-flow context"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("-c,--config", o.config_path, "JSON config file (empty or absent: defaults)");
  app.add_option("--seed", o.seed, "override the seed");
  app.add_option("--out-dir", o.out_dir, "override the output directory");
  app.add_option("--variants", o.variants, "override the variant list, e.g. --variants X W4 WIT")->delimiter(',');

  std::string action;
  for (const auto& s : bikeod::workflow::stage_names()) {
    app.add_subcommand(s, fmt::format("run the {} stage", s))->callback([&action, s] { action = s; });
  }
  app.add_subcommand("all", "run every stage in order")->callback([&action] { action = "all"; });
  app.add_subcommand("config", "validate the config and print it with defaults filled in")
      ->callback([&action] { action = "config"; });
  // allow global options after the subcommand too
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    const auto cfg = resolve(o);
    if (action == "config") {
      std::cout << bikeod::config::to_json(cfg).dump(2) << "\n";
    } else if (action == "all") {
      bikeod::workflow::run_all(cfg, std::cout);
    } else {
      bikeod::workflow::run_stage(action, cfg, std::cout);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error:\n";
    for (const auto& msg : e.errors()) std::cerr << "  " << msg << "\n";
    return 1;
  } catch (const bikeod::workflow::MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 1;
  } catch (const bikeod::workflow::StaleArtifact& e) {
    std::cerr << "stale artifact: " << e.what() << "\n";
    return 1;
  } catch (const bikeod::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
