#include "bikeod/geo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/core.h>

#include "bikeod/csv.hpp"
#include "json.hpp"

namespace bikeod::geo {
namespace {

// Coordinates are meters; anything closer than a micrometer is the same spot.
constexpr double kTol = 1e-6;

struct Box {
  double x0 = std::numeric_limits<double>::infinity();
  double y0 = std::numeric_limits<double>::infinity();
  double x1 = -std::numeric_limits<double>::infinity();
  double y1 = -std::numeric_limits<double>::infinity();

  void add(Point p) {
    x0 = std::min(x0, p.x);
    y0 = std::min(y0, p.y);
    x1 = std::max(x1, p.x);
    y1 = std::max(y1, p.y);
  }
  bool overlaps(const Box& o, double pad) const {
    return x0 <= o.x1 + pad && o.x0 <= x1 + pad && y0 <= o.y1 + pad && o.y0 <= y1 + pad;
  }
};

struct Segment {
  Point a;
  Point b;
};

double cross(Point o, Point a, Point b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

double dist(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

double point_segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  if (len2 == 0.0) return dist(p, a);
  const double t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
  return dist(p, Point{a.x + t * dx, a.y + t * dy});
}

template <typename Fn>
void for_each_edge(const Zone& z, Fn&& fn) {
  for (const auto& poly : z.polygons) {
    for (std::size_t i = 0; i + 1 < poly.outer.size(); ++i) fn(Segment{poly.outer[i], poly.outer[i + 1]});
    for (const auto& h : poly.holes)
      for (std::size_t i = 0; i + 1 < h.size(); ++i) fn(Segment{h[i], h[i + 1]});
  }
}

Box bounds(const Zone& z) {
  Box b;
  for (const auto& poly : z.polygons)
    for (Point p : poly.outer) b.add(p);
  return b;
}

// Length over which segment s lies on segment e.
double collinear_overlap(const Segment& e, const Segment& s) {
  const double len = dist(e.a, e.b);
  if (len <= kTol) return 0.0;
  const double ux = (e.b.x - e.a.x) / len, uy = (e.b.y - e.a.y) / len;
  auto offset = [&](Point p) { return std::abs((p.x - e.a.x) * uy - (p.y - e.a.y) * ux); };
  if (offset(s.a) > kTol || offset(s.b) > kTol) return 0.0;
  const double ta = (s.a.x - e.a.x) * ux + (s.a.y - e.a.y) * uy;
  const double tb = (s.b.x - e.a.x) * ux + (s.b.y - e.a.y) * uy;
  const double lo = std::max(0.0, std::min(ta, tb));
  const double hi = std::min(len, std::max(ta, tb));
  return hi > lo ? hi - lo : 0.0;
}

int orientation(Point a, Point b, Point c) {
  const double v = cross(a, b, c);
  return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0);
}

bool on_segment(Point a, Point b, Point p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

bool segments_intersect(Point p1, Point p2, Point q1, Point q2) {
  const int o1 = orientation(p1, p2, q1), o2 = orientation(p1, p2, q2);
  const int o3 = orientation(q1, q2, p1), o4 = orientation(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(p1, p2, q1)) return true;
  if (o2 == 0 && on_segment(p1, p2, q2)) return true;
  if (o3 == 0 && on_segment(q1, q2, p1)) return true;
  if (o4 == 0 && on_segment(q1, q2, p2)) return true;
  return false;
}

bool point_in_ring(const Ring& ring, Point p) {
  bool inside = false;
  for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
    const Point a = ring[i], b = ring[j];
    if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) {
      inside = !inside;
    }
  }
  return inside;
}

Point ring_centroid(const Ring& ring) {
  double a2 = 0.0, cx = 0.0, cy = 0.0;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    const double c = ring[i].x * ring[i + 1].y - ring[i + 1].x * ring[i].y;
    a2 += c;
    cx += (ring[i].x + ring[i + 1].x) * c;
    cy += (ring[i].y + ring[i + 1].y) * c;
  }
  return Point{cx / (3.0 * a2), cy / (3.0 * a2)};
}

void compute_shape(Zone& z) {
  double total = 0.0, cx = 0.0, cy = 0.0;
  auto accumulate_ring = [&](const Ring& r, double sign) {
    const double a = std::abs(signed_area(r)) * sign;
    const Point c = ring_centroid(r);
    total += a;
    cx += a * c.x;
    cy += a * c.y;
  };
  for (const auto& poly : z.polygons) {
    accumulate_ring(poly.outer, 1.0);
    for (const auto& h : poly.holes) accumulate_ring(h, -1.0);
  }
  if (!(total > 0.0)) throw DataError(fmt::format("zone '{}': surface must be positive", z.id));
  z.surface = total;
  z.centroid = Point{cx / total, cy / total};
}

Ring oriented(Ring r, bool ccw) {
  if ((signed_area(r) > 0.0) != ccw) std::reverse(r.begin(), r.end());
  return r;
}

void drop_repeated_points(Ring& r) {
  r.erase(std::unique(r.begin(), r.end()), r.end());
}

std::string json_id(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw DataError("zone id must be a string or integer");
}

Ring parse_ring(const nlohmann::json& coords, const std::string& id) {
  if (!coords.is_array()) throw DataError(fmt::format("zone '{}': ring is not an array", id));
  Ring r;
  for (const auto& pt : coords) {
    if (!pt.is_array() || pt.size() < 2 || !pt[0].is_number() || !pt[1].is_number()) {
      throw DataError(fmt::format("zone '{}': invalid coordinate", id));
    }
    r.push_back(Point{pt[0].get<double>(), pt[1].get<double>()});
  }
  drop_repeated_points(r);
  validate_ring(r, id);
  return r;
}

Polygon parse_polygon(const nlohmann::json& rings, const std::string& id) {
  if (!rings.is_array() || rings.empty()) throw DataError(fmt::format("zone '{}': empty polygon", id));
  Polygon p;
  p.outer = oriented(parse_ring(rings[0], id), true);
  for (std::size_t i = 1; i < rings.size(); ++i) p.holes.push_back(oriented(parse_ring(rings[i], id), false));
  return p;
}

nlohmann::json ring_json(const Ring& r) {
  nlohmann::json out = nlohmann::json::array();
  for (Point p : r) out.push_back({p.x, p.y});
  return out;
}

}  // namespace

double signed_area(const Ring& ring) {
  double a2 = 0.0;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) a2 += ring[i].x * ring[i + 1].y - ring[i + 1].x * ring[i].y;
  return 0.5 * a2;
}

double polygon_area(const Polygon& p) {
  double a = std::abs(signed_area(p.outer));
  for (const auto& h : p.holes) a -= std::abs(signed_area(h));
  return a;
}

void validate_ring(const Ring& ring, const std::string& zone_id) {
  if (ring.size() < 4) {
    throw DataError(fmt::format("zone '{}': invalid ring: needs at least 4 positions, got {}", zone_id,
                                ring.size()));
  }
  if (ring.front() != ring.back()) {
    throw DataError(fmt::format("zone '{}': invalid ring: not closed", zone_id));
  }
  const std::size_t n = ring.size() - 1;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool neighbours = j == i + 1 || (i == 0 && j == n - 1);
      if (neighbours) continue;
      if (segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1])) {
        throw DataError(fmt::format("zone '{}': invalid ring: self-intersection between edges {} and {}",
                                    zone_id, i, j));
      }
    }
  }
  if (std::abs(signed_area(ring)) <= 0.0) {
    throw DataError(fmt::format("zone '{}': invalid ring: zero area", zone_id));
  }
}

double shared_boundary_length(const Zone& a, const Zone& b) {
  if (!bounds(a).overlaps(bounds(b), kTol)) return 0.0;
  double total = 0.0;
  for_each_edge(a, [&](const Segment& ea) {
    Box eb;
    eb.add(ea.a);
    eb.add(ea.b);
    for_each_edge(b, [&](const Segment& sb) {
      Box bb;
      bb.add(sb.a);
      bb.add(sb.b);
      if (eb.overlaps(bb, kTol)) total += collinear_overlap(ea, sb);
    });
  });
  return total;
}

ZonePartition::ZonePartition(std::vector<Zone> zones) : zones_(std::move(zones)) {
  if (zones_.empty()) throw DataError("partition has no zones");
  std::sort(zones_.begin(), zones_.end(), [](const Zone& a, const Zone& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < zones_.size(); ++i) {
    if (zones_[i].id == zones_[i - 1].id) throw DataError(fmt::format("duplicate zone id '{}'", zones_[i].id));
  }
  for (auto& z : zones_) {
    if (z.polygons.empty()) throw DataError(fmt::format("zone '{}' has no polygon", z.id));
    compute_shape(z);
    if (z.members.empty()) z.members = {z.id};
  }
  std::vector<Box> boxes;
  for (const auto& z : zones_) boxes.push_back(bounds(z));
  for (std::size_t i = 0; i < zones_.size(); ++i)
    for (std::size_t j = i + 1; j < zones_.size(); ++j) {
      if (!boxes[i].overlaps(boxes[j], kTol)) continue;
      const double p = shared_boundary_length(zones_[i], zones_[j]);
      if (p > kTol) shared_[{i, j}] = p;
    }
  build_index();
}

ZonePartition::ZonePartition(std::vector<Zone> zones,
                             std::map<std::pair<std::size_t, std::size_t>, double> shared,
                             std::vector<MergeEvent> merges)
    : zones_(std::move(zones)), shared_(std::move(shared)), merges_(std::move(merges)) {
  build_index();
}

void ZonePartition::build_index() {
  index_.clear();
  for (std::size_t i = 0; i < zones_.size(); ++i) index_[zones_[i].id] = i;
}

std::optional<std::size_t> ZonePartition::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ZonePartition::index_of(const std::string& id) const {
  auto i = find(id);
  if (!i) throw DataError(fmt::format("unknown zone id '{}'", id));
  return *i;
}

bool ZonePartition::adjacent(std::size_t i, std::size_t j) const { return shared_perimeter(i, j) > 0.0; }

double ZonePartition::shared_perimeter(std::size_t i, std::size_t j) const {
  if (i == j) return 0.0;
  auto it = shared_.find({std::min(i, j), std::max(i, j)});
  return it == shared_.end() ? 0.0 : it->second;
}

double ZonePartition::total_surface() const {
  double s = 0.0;
  for (const auto& z : zones_) s += z.surface;
  return s;
}

double merge_objective(const ZonePartition& partition, std::size_t i, std::size_t j) {
  const double p = partition.shared_perimeter(i, j);
  if (!(p > 0.0)) {
    throw std::invalid_argument(fmt::format("zones '{}' and '{}' are not adjacent", partition.zone(i).id,
                                            partition.zone(j).id));
  }
  return (partition.zone(i).surface + partition.zone(j).surface) / p;
}

namespace {

std::size_t connected_components(const ZonePartition& p) {
  std::vector<std::size_t> parent(p.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto root = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::size_t comps = p.size();
  for (const auto& [ij, len] : p.adjacency()) {
    const auto a = root(ij.first), b = root(ij.second);
    if (a != b) {
      parent[b] = a;
      --comps;
    }
  }
  return comps;
}

}  // namespace

ZonePartition aggregate_to(const ZonePartition& partition, std::size_t target_count) {
  if (target_count == 0) throw std::invalid_argument("aggregation target must be at least 1");
  if (target_count > partition.size()) {
    throw std::invalid_argument(fmt::format("aggregation target {} exceeds current zone count {}",
                                            target_count, partition.size()));
  }
  const std::size_t reachable = connected_components(partition);
  if (reachable > target_count) {
    throw DataError(fmt::format(
        "cannot aggregate to {} zones: the territory has {} disconnected parts, so {} is the "
        "achievable minimum",
        target_count, reachable, reachable));
  }

  std::map<std::string, Zone> alive;
  for (const auto& z : partition.zones()) alive.emplace(z.id, z);
  // Symmetric neighbor table keyed by id.
  std::map<std::string, std::map<std::string, double>> nbr;
  for (const auto& [ij, len] : partition.adjacency()) {
    const auto& a = partition.zone(ij.first).id;
    const auto& b = partition.zone(ij.second).id;
    nbr[a][b] = len;
    nbr[b][a] = len;
  }
  std::vector<MergeEvent> merges = partition.merges();

  while (alive.size() > target_count) {
    const std::string* best_a = nullptr;
    const std::string* best_b = nullptr;
    double best = std::numeric_limits<double>::infinity();
    // Map order visits (a, b) lexicographically with a < b; only a strictly
    // smaller objective displaces the incumbent.
    for (const auto& [a, row] : nbr) {
      for (const auto& [b, len] : row) {
        if (!(a < b)) continue;
        const double obj = (alive.at(a).surface + alive.at(b).surface) / len;
        if (obj < best * (1.0 - 1e-12)) {
          best = obj;
          best_a = &a;
          best_b = &b;
        }
      }
    }
    if (best_a == nullptr) {
      throw DataError(fmt::format("no adjacent pair left at {} zones (target {})", alive.size(), target_count));
    }
    const std::string a = *best_a, b = *best_b;
    Zone& za = alive.at(a);
    Zone zb = std::move(alive.at(b));
    alive.erase(b);

    const double sa = za.surface, sb = zb.surface, s = sa + sb;
    za.centroid = Point{(sa * za.centroid.x + sb * zb.centroid.x) / s, (sa * za.centroid.y + sb * zb.centroid.y) / s};
    if (za.functionality.size() == zb.functionality.size()) {
      for (std::size_t k = 0; k < za.functionality.size(); ++k) {
        za.functionality[k] = (sa * za.functionality[k] + sb * zb.functionality[k]) / s;
      }
    }
    za.surface = s;
    za.members.insert(za.members.end(), zb.members.begin(), zb.members.end());
    std::sort(za.members.begin(), za.members.end());
    za.polygons.insert(za.polygons.end(), zb.polygons.begin(), zb.polygons.end());

    for (const auto& [k, len] : nbr.at(b)) {
      nbr[k].erase(b);
      if (k == a) continue;
      nbr[a][k] += len;
      nbr[k][a] += len;
    }
    nbr.erase(b);
    nbr[a].erase(b);
    merges.push_back(MergeEvent{a, b, a, best});
  }

  std::vector<Zone> zones;
  for (auto& [id, z] : alive) {
    if (z.members.size() > 1) {
      if (auto outline = dissolve(z.polygons)) z.polygons = std::move(*outline);
    }
    zones.push_back(std::move(z));
  }
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < zones.size(); ++i) idx[zones[i].id] = i;
  std::map<std::pair<std::size_t, std::size_t>, double> shared;
  for (const auto& [a, row] : nbr)
    for (const auto& [b, len] : row)
      if (a < b) shared[{idx.at(a), idx.at(b)}] = len;
  return ZonePartition(std::move(zones), std::move(shared), std::move(merges));
}

std::optional<std::vector<Polygon>> dissolve(const std::vector<Polygon>& parts) {
  std::vector<Segment> edges;
  std::set<Point> vertices;
  auto add_ring = [&](const Ring& r) {
    for (std::size_t i = 0; i + 1 < r.size(); ++i) {
      edges.push_back(Segment{r[i], r[i + 1]});
      vertices.insert(r[i]);
    }
  };
  for (const auto& p : parts) {
    add_ring(oriented(p.outer, true));
    for (const auto& h : p.holes) add_ring(oriented(h, false));
  }

  // Split every edge at foreign vertices lying on it so that shared stretches
  // become identical opposite edges.
  std::map<std::pair<Point, Point>, int> directed;
  for (const auto& e : edges) {
    const double len = dist(e.a, e.b);
    std::vector<std::pair<double, Point>> cuts{{0.0, e.a}, {len, e.b}};
    Box eb;
    eb.add(e.a);
    eb.add(e.b);
    for (Point v : vertices) {
      if (v.x < eb.x0 - kTol || v.x > eb.x1 + kTol || v.y < eb.y0 - kTol || v.y > eb.y1 + kTol) continue;
      if (v == e.a || v == e.b) continue;
      if (point_segment_distance(v, e.a, e.b) > kTol) continue;
      const double t = ((v.x - e.a.x) * (e.b.x - e.a.x) + (v.y - e.a.y) * (e.b.y - e.a.y)) / len;
      if (t > kTol && t < len - kTol) cuts.emplace_back(t, v);
    }
    std::sort(cuts.begin(), cuts.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      const Point p = cuts[i].second, q = cuts[i + 1].second;
      if (p == q) continue;
      auto rev = directed.find({q, p});
      if (rev != directed.end() && rev->second > 0) {
        if (--rev->second == 0) directed.erase(rev);
      } else {
        ++directed[{p, q}];
      }
    }
  }

  std::map<Point, std::vector<Point>> outgoing;
  std::size_t remaining = 0;
  for (const auto& [pq, count] : directed) {
    for (int c = 0; c < count; ++c) outgoing[pq.first].push_back(pq.second);
    remaining += static_cast<std::size_t>(count);
  }

  std::vector<Ring> rings;
  while (remaining > 0) {
    auto it = std::find_if(outgoing.begin(), outgoing.end(), [](const auto& kv) { return !kv.second.empty(); });
    const Point start = it->first;
    Ring ring{start};
    Point prev = start;
    Point cur = it->second.front();
    it->second.erase(it->second.begin());
    --remaining;
    std::size_t guard = 0;
    while (cur != start) {
      ring.push_back(cur);
      auto& outs = outgoing[cur];
      if (outs.empty() || ++guard > edges.size() * 4 + 16) return std::nullopt;
      // Keep the region on the left: take the sharpest left turn.
      const double dx = cur.x - prev.x, dy = cur.y - prev.y;
      std::size_t pick = 0;
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < outs.size(); ++k) {
        const double ex = outs[k].x - cur.x, ey = outs[k].y - cur.y;
        const double turn = std::atan2(dx * ey - dy * ex, dx * ex + dy * ey);
        if (turn > best) {
          best = turn;
          pick = k;
        }
      }
      prev = cur;
      cur = outs[pick];
      outs.erase(outs.begin() + static_cast<std::ptrdiff_t>(pick));
      --remaining;
    }
    ring.push_back(start);

    // Drop vertices in the middle of straight runs.
    Ring simple;
    const std::size_t n = ring.size() - 1;
    for (std::size_t i = 0; i < n; ++i) {
      const Point a = ring[(i + n - 1) % n], b = ring[i], c = ring[(i + 1) % n];
      const double len = dist(a, b) * dist(b, c);
      const bool straight = std::abs(cross(a, b, c)) <= kTol * std::max(1.0, std::sqrt(len)) &&
                            (b.x - a.x) * (c.x - b.x) + (b.y - a.y) * (c.y - b.y) > 0.0;
      if (!straight) simple.push_back(b);
    }
    if (simple.size() < 3) return std::nullopt;
    simple.push_back(simple.front());
    rings.push_back(std::move(simple));
  }

  std::vector<Polygon> out;
  std::vector<Ring> holes;
  for (auto& r : rings) {
    if (signed_area(r) > 0.0) {
      out.push_back(Polygon{std::move(r), {}});
    } else {
      holes.push_back(std::move(r));
    }
  }
  if (out.empty()) return std::nullopt;
  for (auto& h : holes) {
    bool placed = false;
    for (auto& p : out) {
      // Test a hole edge midpoint; hole vertices may sit on the outer ring.
      const Point mid{(h[0].x + h[1].x) / 2.0, (h[0].y + h[1].y) / 2.0};
      if (point_in_ring(p.outer, mid)) {
        p.holes.push_back(std::move(h));
        placed = true;
        break;
      }
    }
    if (!placed) return std::nullopt;
  }
  return out;
}

double boundary_distance(const Zone& zone, Point p) {
  double best = std::numeric_limits<double>::infinity();
  for_each_edge(zone, [&](const Segment& s) { best = std::min(best, point_segment_distance(p, s.a, s.b)); });
  return best;
}

bool contains(const Zone& zone, Point p) {
  if (boundary_distance(zone, p) <= kTol) return true;
  for (const auto& poly : zone.polygons) {
    if (!point_in_ring(poly.outer, p)) continue;
    const bool in_hole = std::any_of(poly.holes.begin(), poly.holes.end(),
                                     [&](const Ring& h) { return point_in_ring(h, p); });
    if (!in_hole) return true;
  }
  return false;
}

std::vector<Station> assign_stations(const ZonePartition& partition, std::vector<Station> stations) {
  for (auto& st : stations) {
    // zones() is sorted by id, so the first hit is the smallest id.
    const Zone* hit = nullptr;
    for (const auto& z : partition.zones()) {
      if (contains(z, st.location)) {
        hit = &z;
        break;
      }
    }
    if (hit == nullptr) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& z : partition.zones()) {
        const double d = boundary_distance(z, st.location);
        if (d < best) {
          best = d;
          hit = &z;
        }
      }
    }
    st.zone_id = hit->id;
  }
  return stations;
}

ZonePartition parse_partition(const std::string& text, const std::string& source) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("{}: not valid JSON: {}", source, e.what()));
  }
  if (!doc.is_object() || doc.value("type", "") != "FeatureCollection" || !doc.contains("features") ||
      !doc["features"].is_array()) {
    throw DataError(fmt::format("{}: expected a GeoJSON FeatureCollection", source));
  }
  if (doc["features"].empty()) throw DataError(fmt::format("{}: empty file (no features)", source));

  std::vector<Zone> zones;
  std::set<std::string> seen;
  for (const auto& f : doc["features"]) {
    const auto& props = f.contains("properties") ? f["properties"] : nlohmann::json::object();
    if (!props.is_object() || !props.contains("id")) throw DataError(fmt::format("{}: feature without properties.id", source));
    Zone z;
    z.id = json_id(props["id"]);
    if (!seen.insert(z.id).second) throw DataError(fmt::format("{}: duplicate zone id '{}'", source, z.id));
    if (props.contains("functionality") && !props["functionality"].is_null()) {
      for (const auto& v : props["functionality"]) {
        if (!v.is_number()) throw DataError(fmt::format("zone '{}': functionality must be numeric", z.id));
        z.functionality.push_back(v.get<double>());
      }
    }
    if (props.contains("members")) {
      for (const auto& m : props["members"]) z.members.push_back(json_id(m));
    }
    if (!f.contains("geometry") || !f["geometry"].is_object()) {
      throw DataError(fmt::format("zone '{}': missing geometry", z.id));
    }
    const auto& g = f["geometry"];
    const std::string type = g.value("type", "");
    if (type == "Polygon") {
      z.polygons.push_back(parse_polygon(g["coordinates"], z.id));
    } else if (type == "MultiPolygon") {
      for (const auto& p : g["coordinates"]) z.polygons.push_back(parse_polygon(p, z.id));
    } else {
      throw DataError(fmt::format("zone '{}': unsupported geometry type '{}'", z.id, type));
    }
    zones.push_back(std::move(z));
  }
  return ZonePartition(std::move(zones));
}

ZonePartition load_partition(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open zone file '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_partition(ss.str(), path.string());
}

std::string partition_to_geojson(const ZonePartition& partition) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& z : partition.zones()) {
    nlohmann::json geom;
    auto poly_json = [](const Polygon& p) {
      nlohmann::json rings = nlohmann::json::array();
      rings.push_back(ring_json(p.outer));
      for (const auto& h : p.holes) rings.push_back(ring_json(h));
      return rings;
    };
    if (z.polygons.size() == 1) {
      geom = {{"type", "Polygon"}, {"coordinates", poly_json(z.polygons[0])}};
    } else {
      nlohmann::json polys = nlohmann::json::array();
      for (const auto& p : z.polygons) polys.push_back(poly_json(p));
      geom = {{"type", "MultiPolygon"}, {"coordinates", polys}};
    }
    nlohmann::json props = {{"id", z.id}, {"surface", z.surface}, {"members", z.members}};
    if (!z.functionality.empty()) props["functionality"] = z.functionality;
    features.push_back({{"type", "Feature"}, {"properties", props}, {"geometry", geom}});
  }
  nlohmann::json doc = {{"type", "FeatureCollection"}, {"features", features}};
  return doc.dump(1) + "\n";
}

std::string merge_tree_json(const ZonePartition& partition) {
  nlohmann::json merges = nlohmann::json::array();
  std::size_t step = 0;
  for (const auto& m : partition.merges()) {
    merges.push_back({{"step", ++step}, {"pair", {m.first, m.second}}, {"merged_id", m.merged}, {"objective", m.objective}});
  }
  nlohmann::json zones = nlohmann::json::object();
  for (const auto& z : partition.zones()) zones[z.id] = z.members;
  nlohmann::json doc = {{"merges", merges}, {"zones", zones}};
  return doc.dump(1) + "\n";
}

std::vector<Station> load_stations(const std::filesystem::path& path) {
  const CsvTable t = CsvTable::read(path);
  const auto id = t.column("station_id"), x = t.column("x"), y = t.column("y");
  std::vector<Station> out;
  std::set<std::string> seen;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    if (!seen.insert(t.cell(r, id)).second) throw DataError(fmt::format("{}: duplicate station '{}'", t.source(), t.cell(r, id)));
    out.push_back(Station{t.cell(r, id), Point{t.number(r, x), t.number(r, y)}, {}});
  }
  return out;
}

}  // namespace bikeod::geo
