#pragma once

// The seven OD-pair relation matrices consumed by the multi-graph
// convolution, in fixed order:
//   A_n^O, A_n^D   zone neighbourhood of origins / destinations
//   A_d^O, A_d^D   Gaussian kernel of centroid distances
//   A_f^O, A_f^D   cosine similarity of zone functionality vectors
//   A_corr         clipped Pearson correlation of training-window demand
// Every raw matrix is symmetric with unit diagonal and entries in [0, 1].

#include <array>
#include <filesystem>
#include <string_view>
#include <vector>

#include "bikeod/geo.hpp"
#include "bikeod/kernels.hpp"
#include "bikeod/od.hpp"
#include "bikeod/tensor.hpp"

namespace bikeod::graphs {

enum class Side { Origin, Destination };

inline constexpr std::size_t kStackSize = 7;
inline constexpr std::array<std::string_view, kStackSize> kMatrixNames = {
    "A_n_O", "A_n_D", "A_d_O", "A_d_D", "A_f_O", "A_f_D", "A_corr"};

Tensor build_neighborhood(const std::vector<ODPair>& od_pairs, const geo::ZonePartition& partition, Side side);
/// exp(-d^2 / sigma^2); sigma is the population standard deviation of the
/// centroid distances over all distinct zone pairs of the partition.
Tensor build_centroid_distance(const std::vector<ODPair>& od_pairs, const geo::ZonePartition& partition,
                               Side side);
Tensor build_functionality(const std::vector<ODPair>& od_pairs, const geo::ZonePartition& partition, Side side);
/// max(0, Pearson) over the panel's hours. Pass the training window only.
Tensor build_correlation(const ODDemandPanel& train_panel);

/// D^-1 (A + I) with D the row sums of A + I.
Tensor normalize(const Tensor& a);

struct AdjacencyStack {
  std::vector<Tensor> matrices;
  std::vector<Tensor> normalized;

  std::size_t nodes() const { return matrices.empty() ? 0 : matrices.front().rows(); }
  GraphStack graph_stack() const { return GraphStack(normalized); }
};

/// Fills `normalized` from `matrices`; requires exactly 7 square matrices.
AdjacencyStack normalize_stack(AdjacencyStack stack);

/// Builds all seven matrices (concurrently, assembled in fixed order) and
/// normalizes them.
AdjacencyStack build_stack(const std::vector<ODPair>& od_pairs, const geo::ZonePartition& partition,
                           const ODDemandPanel& train_panel);

/// One CSV per matrix (raw and normalized) plus `manifest.json` recording
/// the order, N, and the OD index -> (origin, destination) mapping.
void save_stack(const std::filesystem::path& dir, const AdjacencyStack& stack, const std::vector<ODPair>& od_pairs);
AdjacencyStack load_stack(const std::filesystem::path& dir, std::vector<ODPair>* od_pairs = nullptr);

}  // namespace bikeod::graphs
