#include "bikeod/od.hpp"

#include <fmt/core.h>

#include "bikeod/error.hpp"

namespace bikeod {

double ODDemandPanel::total() const {
  double s = 0.0;
  for (double v : demand.data()) s += v;
  return s;
}

ODDemandPanel ODDemandPanel::window(Hour from, Hour to) const {
  if (from < grid.start || to > grid.end() || to < from) {
    throw DataError(fmt::format("panel window [{}, {}) outside [{}, {})", format_hour(from), format_hour(to),
                                format_hour(grid.start), format_hour(grid.end())));
  }
  ODDemandPanel out;
  out.od_pairs = od_pairs;
  out.grid = HourGrid{from, static_cast<std::size_t>(to - from)};
  out.demand = Tensor(out.grid.count, size());
  const std::size_t offset = static_cast<std::size_t>(from - grid.start);
  for (std::size_t r = 0; r < out.grid.count; ++r)
    for (std::size_t c = 0; c < size(); ++c) out.demand(r, c) = demand(offset + r, c);
  return out;
}

ODDemandPanel ODDemandPanel::select(const std::vector<std::size_t>& od_indices) const {
  ODDemandPanel out;
  out.grid = grid;
  out.demand = Tensor(grid.count, od_indices.size());
  for (std::size_t k = 0; k < od_indices.size(); ++k) {
    const std::size_t src = od_indices[k];
    if (src >= size()) throw DataError(fmt::format("OD index {} out of range ({} pairs)", src, size()));
    ODPair p = od_pairs[src];
    p.index = k;
    out.od_pairs.push_back(std::move(p));
    for (std::size_t r = 0; r < grid.count; ++r) out.demand(r, k) = demand(r, src);
  }
  return out;
}

}  // namespace bikeod
