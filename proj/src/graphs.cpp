#include "bikeod/graphs.hpp"

#include <cmath>
#include <fstream>

#include <fmt/core.h>

#include "bikeod/csv.hpp"
#include "bikeod/error.hpp"
#include "json.hpp"

namespace bikeod::graphs {

namespace {

std::vector<std::size_t> side_zones(const std::vector<ODPair>& od_pairs, const geo::ZonePartition& partition,
                                    Side side) {
  std::vector<std::size_t> idx;
  idx.reserve(od_pairs.size());
  for (const auto& od : od_pairs) {
    const auto& id = side == Side::Origin ? od.origin : od.destination;
    const auto found = partition.find(id);
    if (!found) throw DataError(fmt::format("OD pair {} references unknown zone '{}'", od.index, id));
    idx.push_back(*found);
  }
  return idx;
}

// Fills a symmetric matrix with unit diagonal from a zone-level relation.
template <class F>
Tensor from_zone_relation(const std::vector<std::size_t>& zones, F&& rel) {
  const std::size_t n = zones.size();
  Tensor a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    a(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = rel(zones[i], zones[j]);
      a(i, j) = v;
      a(j, i) = v;
    }
  }
  return a;
}

double distance(const geo::Point& a, const geo::Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

void write_matrix(const std::filesystem::path& path, const Tensor& m) {
  std::ofstream out(path);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  for (std::size_t c = 0; c < m.cols(); ++c) out << (c ? "," : "") << "c" << c;
  out << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out << (c ? "," : "") << format_number(m(r, c));
    out << '\n';
  }
}

Tensor read_matrix(const std::filesystem::path& path, std::size_t n) {
  const auto table = CsvTable::read(path);
  if (table.rows() != n || table.header().size() != n) {
    throw DataError(fmt::format("{}: expected a {}x{} matrix", path.string(), n, n));
  }
  Tensor m(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) m(r, c) = table.number(r, c);
  return m;
}

}  // namespace

Tensor build_neighborhood(const std::vector<ODPair>& od_pairs, const geo::ZonePartition& partition, Side side) {
  const auto zones = side_zones(od_pairs, partition, side);
  return from_zone_relation(zones, [&](std::size_t a, std::size_t b) {
    return (a == b || partition.adjacent(a, b)) ? 1.0 : 0.0;
  });
}

Tensor build_centroid_distance(const std::vector<ODPair>& od_pairs, const geo::ZonePartition& partition,
                               Side side) {
  const auto zones = side_zones(od_pairs, partition, side);
  double sum = 0.0, sum_sq = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < partition.size(); ++i) {
    for (std::size_t j = i + 1; j < partition.size(); ++j) {
      const double d = distance(partition.zone(i).centroid, partition.zone(j).centroid);
      sum += d;
      sum_sq += d * d;
      ++count;
    }
  }
  double sigma = 0.0;
  if (count > 0) {
    const double mean = sum / static_cast<double>(count);
    sigma = std::sqrt(std::max(0.0, sum_sq / static_cast<double>(count) - mean * mean));
  }
  if (!(sigma > 0.0)) throw DataError("centroid distance kernel is degenerate: sigma = 0");
  const double s2 = sigma * sigma;
  return from_zone_relation(zones, [&](std::size_t a, std::size_t b) {
    const double d = distance(partition.zone(a).centroid, partition.zone(b).centroid);
    return std::exp(-d * d / s2);
  });
}

Tensor build_functionality(const std::vector<ODPair>& od_pairs, const geo::ZonePartition& partition, Side side) {
  const auto zones = side_zones(od_pairs, partition, side);
  std::size_t len = 0;
  for (auto z : zones) {
    const auto& f = partition.zone(z).functionality;
    if (f.empty()) throw DataError(fmt::format("zone '{}' has no functionality vector", partition.zone(z).id));
    if (len == 0) len = f.size();
    if (f.size() != len) {
      throw DataError(fmt::format("zone '{}' functionality has length {}, expected {}", partition.zone(z).id,
                                  f.size(), len));
    }
  }
  return from_zone_relation(zones, [&](std::size_t a, std::size_t b) {
    const auto& u = partition.zone(a).functionality;
    const auto& v = partition.zone(b).functionality;
    double uv = 0.0, uu = 0.0, vv = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
      uv += u[k] * v[k];
      uu += u[k] * u[k];
      vv += v[k] * v[k];
    }
    if (uu == 0.0 || vv == 0.0) return 0.0;
    return std::clamp(uv / std::sqrt(uu * vv), 0.0, 1.0);
  });
}

Tensor build_correlation(const ODDemandPanel& train_panel) {
  const std::size_t t = train_panel.grid.count;
  const std::size_t n = train_panel.size();
  if (t < 2) throw DataError(fmt::format("correlation needs at least 2 timestamps, got {}", t));
  const Tensor& y = train_panel.demand;
  std::vector<double> mean(n, 0.0), norm(n, 0.0);
  Tensor centered(t, n);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t r = 0; r < t; ++r) mean[c] += y(r, c);
    mean[c] /= static_cast<double>(t);
    for (std::size_t r = 0; r < t; ++r) {
      centered(r, c) = y(r, c) - mean[c];
      norm[c] += centered(r, c) * centered(r, c);
    }
    norm[c] = std::sqrt(norm[c]);
  }
  Tensor a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    a(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double v = 0.0;
      if (norm[i] > 0.0 && norm[j] > 0.0) {
        double cov = 0.0;
        for (std::size_t r = 0; r < t; ++r) cov += centered(r, i) * centered(r, j);
        v = std::clamp(cov / (norm[i] * norm[j]), 0.0, 1.0);
      }
      a(i, j) = v;
      a(j, i) = v;
    }
  }
  return a;
}

Tensor normalize(const Tensor& a) {
  if (a.rows() != a.cols()) throw ShapeError("normalize: matrix must be square, got " + shape_string(a));
  Tensor out = a;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    out(r, r) += 1.0;
    double s = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) s += out(r, c);
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) /= s;
  }
  return out;
}

AdjacencyStack normalize_stack(AdjacencyStack stack) {
  if (stack.matrices.size() != kStackSize) {
    throw ShapeError(fmt::format("adjacency stack needs {} matrices, got {}", kStackSize, stack.matrices.size()));
  }
  const std::size_t n = stack.matrices.front().rows();
  stack.normalized.clear();
  for (const auto& m : stack.matrices) {
    if (m.rows() != n || m.cols() != n) {
      throw ShapeError(fmt::format("adjacency stack matrix {} is not {}x{}", shape_string(m), n, n));
    }
    stack.normalized.push_back(normalize(m));
  }
  return stack;
}

AdjacencyStack build_stack(const std::vector<ODPair>& od_pairs, const geo::ZonePartition& partition,
                           const ODDemandPanel& train_panel) {
  if (train_panel.od_pairs != od_pairs) throw DataError("training panel OD pairs differ from the graph OD pairs");
  AdjacencyStack stack;
  stack.matrices.resize(kStackSize);
  std::vector<std::exception_ptr> errors(kStackSize);
#pragma omp parallel for schedule(dynamic, 1)
  for (int k = 0; k < static_cast<int>(kStackSize); ++k) {
    try {
      const Side side = k % 2 == 0 ? Side::Origin : Side::Destination;
      switch (k / 2) {
        case 0: stack.matrices[k] = build_neighborhood(od_pairs, partition, side); break;
        case 1: stack.matrices[k] = build_centroid_distance(od_pairs, partition, side); break;
        case 2: stack.matrices[k] = build_functionality(od_pairs, partition, side); break;
        default: stack.matrices[k] = build_correlation(train_panel); break;
      }
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return normalize_stack(std::move(stack));
}

void save_stack(const std::filesystem::path& dir, const AdjacencyStack& stack, const std::vector<ODPair>& od_pairs) {
  if (stack.matrices.size() != kStackSize || stack.normalized.size() != kStackSize) {
    throw ShapeError("save_stack: incomplete adjacency stack");
  }
  if (od_pairs.size() != stack.nodes()) throw ShapeError("save_stack: OD pair count differs from matrix size");
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["n"] = stack.nodes();
  manifest["order"] = nlohmann::json::array();
  for (std::size_t k = 0; k < kStackSize; ++k) {
    const std::string name(kMatrixNames[k]);
    write_matrix(dir / (name + ".csv"), stack.matrices[k]);
    write_matrix(dir / (name + "_norm.csv"), stack.normalized[k]);
    manifest["order"].push_back({{"name", name}, {"raw", name + ".csv"}, {"normalized", name + "_norm.csv"}});
  }
  for (const auto& od : od_pairs) {
    manifest["od_pairs"].push_back({{"index", od.index}, {"origin", od.origin}, {"destination", od.destination}});
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

AdjacencyStack load_stack(const std::filesystem::path& dir, std::vector<ODPair>* od_pairs) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError(fmt::format("missing graph manifest {}", (dir / "manifest.json").string()));
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
    const auto n = manifest.at("n").get<std::size_t>();
    const auto& order = manifest.at("order");
    if (order.size() != kStackSize) throw DataError("graph manifest must list 7 matrices");
    AdjacencyStack stack;
    for (std::size_t k = 0; k < kStackSize; ++k) {
      if (order[k].at("name").get<std::string>() != kMatrixNames[k]) {
        throw DataError(fmt::format("graph manifest entry {} is '{}', expected '{}'", k,
                                    order[k].at("name").get<std::string>(), kMatrixNames[k]));
      }
      stack.matrices.push_back(read_matrix(dir / order[k].at("raw").get<std::string>(), n));
      stack.normalized.push_back(read_matrix(dir / order[k].at("normalized").get<std::string>(), n));
    }
    if (od_pairs) {
      od_pairs->clear();
      for (const auto& od : manifest.at("od_pairs")) {
        od_pairs->push_back(ODPair{od.at("index").get<std::size_t>(), od.at("origin").get<std::string>(),
                                   od.at("destination").get<std::string>()});
      }
      if (od_pairs->size() != n) throw DataError("graph manifest OD pair count differs from n");
    }
    return stack;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("malformed graph manifest: {}", e.what()));
  }
}

}  // namespace bikeod::graphs
