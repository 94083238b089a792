#pragma once

#include <string>
#include <vector>

#include "bikeod/tensor.hpp"
#include "bikeod/timegrid.hpp"

namespace bikeod {

/// An ordered (origin, destination) zone couple with origin != destination.
struct ODPair {
  std::size_t index = 0;
  std::string origin;
  std::string destination;
  friend bool operator==(const ODPair&, const ODPair&) = default;
};

/// Hourly trip counts per OD pair on a gapless grid. `demand` is
/// [grid.count x od_pairs.size()].
struct ODDemandPanel {
  std::vector<ODPair> od_pairs;
  HourGrid grid;
  Tensor demand;

  std::size_t size() const { return od_pairs.size(); }
  double at(Hour t, std::size_t od) const { return demand(grid.index(t), od); }
  double total() const;

  /// Rows for hours in [from, to).
  ODDemandPanel window(Hour from, Hour to) const;
  /// Columns for the given OD indices, re-indexed densely in the given order.
  ODDemandPanel select(const std::vector<std::size_t>& od_indices) const;
};

}  // namespace bikeod
