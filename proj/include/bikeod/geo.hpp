#pragma once

// Zone polygons in a projected planar CRS (meters), their surfaces and
// shared perimeters, and greedy pairwise aggregation of adjacent zones.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bikeod/error.hpp"

namespace bikeod::geo {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
  friend auto operator<=>(const Point&, const Point&) = default;
};

/// Closed ring: front() == back().
using Ring = std::vector<Point>;

struct Polygon {
  Ring outer;
  std::vector<Ring> holes;
};

/// Signed shoelace area; positive for counter-clockwise rings.
double signed_area(const Ring& ring);
double polygon_area(const Polygon& p);
/// Throws DataError describing the defect: unclosed, too few points,
/// zero area or self-intersecting.
void validate_ring(const Ring& ring, const std::string& zone_id);

struct Zone {
  std::string id;
  std::vector<Polygon> polygons;
  double surface = 0.0;
  Point centroid;
  std::vector<double> functionality;
  /// Original zone ids composing this zone (just {id} before aggregation).
  std::vector<std::string> members;
};

struct MergeEvent {
  std::string first;
  std::string second;
  std::string merged;
  double objective = 0.0;
};

/// Zones sorted by id with their pairwise shared perimeters. Two zones are
/// adjacent iff their boundaries share a segment of positive length.
class ZonePartition {
 public:
  ZonePartition() = default;
  /// Computes surfaces, centroids and shared perimeters from geometry.
  explicit ZonePartition(std::vector<Zone> zones);

  const std::vector<Zone>& zones() const { return zones_; }
  std::size_t size() const { return zones_.size(); }
  const Zone& zone(std::size_t i) const { return zones_[i]; }
  std::optional<std::size_t> find(const std::string& id) const;
  /// Throws DataError for an unknown id.
  std::size_t index_of(const std::string& id) const;

  bool adjacent(std::size_t i, std::size_t j) const;
  /// Shared boundary length; 0 when not adjacent.
  double shared_perimeter(std::size_t i, std::size_t j) const;
  /// Adjacent pairs (i < j) in index order with their shared perimeters.
  const std::map<std::pair<std::size_t, std::size_t>, double>& adjacency() const { return shared_; }
  double total_surface() const;

  const std::vector<MergeEvent>& merges() const { return merges_; }

 private:
  friend ZonePartition aggregate_to(const ZonePartition&, std::size_t);
  ZonePartition(std::vector<Zone> zones, std::map<std::pair<std::size_t, std::size_t>, double> shared,
                std::vector<MergeEvent> merges);

  void build_index();

  std::vector<Zone> zones_;
  std::map<std::string, std::size_t> index_;
  std::map<std::pair<std::size_t, std::size_t>, double> shared_;
  std::vector<MergeEvent> merges_;
};

/// Total length over which the boundaries of two zones coincide.
double shared_boundary_length(const Zone& a, const Zone& b);

/// (s_i + s_j) / P_ij. Throws std::invalid_argument for non-adjacent pairs.
double merge_objective(const ZonePartition& partition, std::size_t i, std::size_t j);

/// Repeatedly merges the adjacent pair with the smallest merge objective
/// (ties: lexicographically smallest (id_i, id_j)) until `target_count` zones
/// remain. The merged zone keeps the smaller id; surfaces add; shared
/// perimeters with each neighbor add; functionality vectors are averaged
/// weighted by surface. Throws DataError naming the achievable minimum when
/// no adjacent pair is left before reaching the target.
ZonePartition aggregate_to(const ZonePartition& partition, std::size_t target_count);

/// Outline of a set of partition polygons with shared interior edges removed.
/// Returns std::nullopt if the edges do not chain into closed rings.
std::optional<std::vector<Polygon>> dissolve(const std::vector<Polygon>& parts);

struct Station {
  std::string id;
  Point location;
  std::string zone_id;
};

/// Distance from a point to the closest boundary edge of a zone.
double boundary_distance(const Zone& zone, Point p);
/// Inside or on the boundary (within tolerance).
bool contains(const Zone& zone, Point p);

/// Point-in-polygon assignment. Points on shared boundaries go to the zone
/// with the smaller id; points outside every zone go to the zone with the
/// nearest boundary (ties: smaller id).
std::vector<Station> assign_stations(const ZonePartition& partition, std::vector<Station> stations);

// --- file formats ---------------------------------------------------------

/// GeoJSON FeatureCollection subset: Polygon / MultiPolygon geometries,
/// `properties.id` (string or integer), optional `properties.functionality`
/// (numeric array) and `properties.members` (string array).
ZonePartition load_partition(const std::filesystem::path& path);
ZonePartition parse_partition(const std::string& geojson_text, const std::string& source = "<memory>");
std::string partition_to_geojson(const ZonePartition& partition);
/// JSON merge tree: ordered merge events plus final members per zone.
std::string merge_tree_json(const ZonePartition& partition);

/// CSV `station_id,x,y`.
std::vector<Station> load_stations(const std::filesystem::path& path);

}  // namespace bikeod::geo
