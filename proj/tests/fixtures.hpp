#pragma once

// Geometry fixtures shared by the unit and acceptance suites.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "bikeod/geo.hpp"
#include "bikeod/optim.hpp"

namespace bikeod::testing {

inline geo::Ring rect_ring(double x0, double y0, double x1, double y1) {
  return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}, {x0, y0}};
}

inline geo::Zone rect_zone(std::string id, double x0, double y0, double x1, double y1) {
  geo::Zone z;
  z.id = std::move(id);
  z.polygons.push_back(geo::Polygon{rect_ring(x0, y0, x1, y1), {}});
  return z;
}

/// rows x cols grid of unit squares with ids "z00", "z01", ... row-major.
inline geo::ZonePartition unit_grid(int rows, int cols) {
  std::vector<geo::Zone> zones;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      zones.push_back(rect_zone(fmt::format("z{:02d}", r * cols + c), c, r, c + 1, r + 1));
  return geo::ZonePartition(std::move(zones));
}

/// Random guillotine subdivision of a w x h rectangle into `count` axis-aligned
/// rectangles with integer-ish cut positions; produces T-junctions.
inline geo::ZonePartition random_partition(std::size_t count, Rng& rng, double w = 10.0, double h = 10.0) {
  struct R {
    double x0, y0, x1, y1;
  };
  std::vector<R> rects{{0.0, 0.0, w, h}};
  while (rects.size() < count) {
    // split the largest rectangle along its longer side at a random quarter point
    auto it = std::max_element(rects.begin(), rects.end(), [](const R& a, const R& b) {
      return (a.x1 - a.x0) * (a.y1 - a.y0) < (b.x1 - b.x0) * (b.y1 - b.y0);
    });
    R r = *it;
    rects.erase(it);
    const double frac = 0.25 + 0.5 * static_cast<double>(rng() % 9) / 8.0;
    if (r.x1 - r.x0 >= r.y1 - r.y0) {
      const double cut = r.x0 + frac * (r.x1 - r.x0);
      rects.push_back({r.x0, r.y0, cut, r.y1});
      rects.push_back({cut, r.y0, r.x1, r.y1});
    } else {
      const double cut = r.y0 + frac * (r.y1 - r.y0);
      rects.push_back({r.x0, r.y0, r.x1, cut});
      rects.push_back({r.x0, cut, r.x1, r.y1});
    }
  }
  std::vector<geo::Zone> zones;
  for (std::size_t i = 0; i < rects.size(); ++i) {
    zones.push_back(rect_zone(fmt::format("z{:02d}", i), rects[i].x0, rects[i].y0, rects[i].x1, rects[i].y1));
  }
  return geo::ZonePartition(std::move(zones));
}

/// Exhaustive greedy oracle: re-derives every surface and shared perimeter
/// from the ORIGINAL geometry at each step and scans all group pairs.
/// Returns the merge sequence as (first, second) group ids.
inline std::vector<std::pair<std::string, std::string>> brute_force_merges(const geo::ZonePartition& base,
                                                                           std::size_t target) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < base.size(); ++i) groups[base.zone(i).id] = {i};
  std::vector<std::pair<std::string, std::string>> seq;
  while (groups.size() > target) {
    double best = 1e300;
    std::pair<std::string, std::string> pick;
    for (auto a = groups.begin(); a != groups.end(); ++a) {
      for (auto b = std::next(a); b != groups.end(); ++b) {
        double perim = 0.0, surf = 0.0;
        for (auto i : a->second)
          for (auto j : b->second) perim += geo::shared_boundary_length(base.zone(i), base.zone(j));
        if (perim <= 1e-9) continue;
        for (auto i : a->second) surf += geo::polygon_area(base.zone(i).polygons[0]);
        for (auto j : b->second) surf += geo::polygon_area(base.zone(j).polygons[0]);
        const double obj = surf / perim;
        if (obj < best * (1.0 - 1e-12)) {
          best = obj;
          pick = {a->first, b->first};
        }
      }
    }
    if (best == 1e300) break;
    seq.push_back(pick);
    auto& dst = groups[pick.first];
    dst.insert(dst.end(), groups[pick.second].begin(), groups[pick.second].end());
    groups.erase(pick.second);
  }
  return seq;
}

/// True when the members of every aggregate form a connected subgraph of the
/// original adjacency.
inline bool aggregates_contiguous(const geo::ZonePartition& base, const geo::ZonePartition& agg) {
  for (const auto& z : agg.zones()) {
    std::set<std::string> members(z.members.begin(), z.members.end());
    std::set<std::string> seen{z.members.front()};
    std::vector<std::string> stack{z.members.front()};
    while (!stack.empty()) {
      const auto cur = base.index_of(stack.back());
      stack.pop_back();
      for (const auto& m : members) {
        if (seen.count(m)) continue;
        if (base.adjacent(cur, base.index_of(m))) {
          seen.insert(m);
          stack.push_back(m);
        }
      }
    }
    if (seen.size() != members.size()) return false;
  }
  return true;
}

}  // namespace bikeod::testing
