#pragma once

// Traffic graphs: the binary connection map, the DTW semantic graph, and
// their normalized forms Â = α(I + D^{-1/2} A D^{-1/2}).

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "gramode/tensor.hpp"

namespace gramode {

enum class DtwMode { threshold, quantile };

struct TrafficGraph {
  std::size_t n_nodes = 0;
  Tensor a_connection;   // N x N binary
  Tensor a_dtw;          // N x N binary
  Tensor a_hat_connection;
  Tensor a_hat_dtw;
  double alpha = 0.4;
};

using EdgeList = std::vector<std::pair<std::size_t, std::size_t>>;

// Symmetric binary adjacency. Self-pairs are ignored; duplicates collapse.
Tensor build_connection_adjacency(const EdgeList& edges, std::size_t n_nodes);

double dtw_distance(std::span<const double> x, std::span<const double> y);

// Pairwise DTW, min-max normalized over all pairs. Threshold mode links
// pairs with normalized distance < epsilon; quantile mode links the
// floor(epsilon * N(N-1)/2) closest pairs, ties broken by (i, j) order.
Tensor build_dtw_adjacency(const std::vector<std::vector<double>>& series, double epsilon, DtwMode mode);

// Zero-degree nodes take D^{-1/2} = 0, so their row is alpha on the diagonal.
Tensor normalize_adjacency(const Tensor& a, double alpha);

// Mean over days of each node's series at steps_per_day resolution. A
// trailing partial day contributes to the positions it covers.
std::vector<std::vector<double>> daily_profiles(const std::vector<std::vector<double>>& series,
                                                std::size_t steps_per_day);

TrafficGraph make_graph(Tensor a_connection, Tensor a_dtw, double alpha);

}  // namespace gramode
