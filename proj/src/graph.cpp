#include "gramode/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gramode/errors.hpp"
#include "gramode/kernels.hpp"

namespace gramode {
namespace {

void check_binary_symmetric(const Tensor& a, const char* what) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw DimensionError(std::string(what) + ": expected a square matrix, got " + shape_str(a.shape()));
  }
  const std::size_t n = a.dim(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double v = a[i * n + j];
      if (v != 0.0 && v != 1.0) throw InputError(std::string(what) + ": adjacency must be binary");
      if (v != a[j * n + i]) throw InputError(std::string(what) + ": adjacency must be symmetric");
    }
}

}  // namespace

Tensor build_connection_adjacency(const EdgeList& edges, std::size_t n_nodes) {
  if (n_nodes == 0) throw InputError("connection adjacency: n_nodes must be positive");
  Tensor a({n_nodes, n_nodes}, 0.0);
  for (const auto& [i, j] : edges) {
    if (i >= n_nodes || j >= n_nodes) {
      throw InputError("connection adjacency: edge (" + std::to_string(i) + ", " + std::to_string(j) +
                       ") out of range for " + std::to_string(n_nodes) + " nodes");
    }
    if (i == j) continue;
    a[i * n_nodes + j] = 1.0;
    a[j * n_nodes + i] = 1.0;
  }
  return a;
}

double dtw_distance(std::span<const double> x, std::span<const double> y) { return kernels::dtw(x, y); }

Tensor build_dtw_adjacency(const std::vector<std::vector<double>>& series, double epsilon, DtwMode mode) {
  const std::size_t n = series.size();
  if (n < 2) throw InputError("dtw adjacency: need at least 2 nodes");
  if (!(epsilon > 0.0)) throw DomainError("dtw adjacency: epsilon must be positive");
  if (mode == DtwMode::quantile && !(epsilon < 1.0)) {
    throw DomainError("dtw adjacency: quantile epsilon must lie in (0, 1)");
  }
  const std::vector<double> dist = kernels::pairwise_dtw(series);

  double lo = dist[1], hi = dist[1];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      lo = std::min(lo, dist[i * n + j]);
      hi = std::max(hi, dist[i * n + j]);
    }
  const double span = hi - lo;

  Tensor a({n, n}, 0.0);
  if (mode == DtwMode::threshold) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double norm = span > 0.0 ? (dist[i * n + j] - lo) / span : 0.0;
        if (norm < epsilon) a[i * n + j] = a[j * n + i] = 1.0;
      }
    return a;
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  std::stable_sort(pairs.begin(), pairs.end(), [&](const auto& p, const auto& q) {
    return dist[p.first * n + p.second] < dist[q.first * n + q.second];
  });
  const auto keep = static_cast<std::size_t>(std::floor(epsilon * static_cast<double>(pairs.size())));
  for (std::size_t k = 0; k < keep; ++k) {
    const auto [i, j] = pairs[k];
    a[i * n + j] = a[j * n + i] = 1.0;
  }
  return a;
}

Tensor normalize_adjacency(const Tensor& a, double alpha) {
  check_binary_symmetric(a, "normalize_adjacency");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("normalize_adjacency: alpha must lie in (0, 1)");
  const std::size_t n = a.dim(0);
  for (std::size_t i = 0; i < n; ++i)
    if (a[i * n + i] != 0.0) throw InputError("normalize_adjacency: adjacency must have a zero diagonal");
  std::vector<double> inv_sqrt(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += a[i * n + j];
    inv_sqrt[i] = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  Tensor out({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double lap = inv_sqrt[i] * a[i * n + j] * inv_sqrt[j];
      out[i * n + j] = alpha * ((i == j ? 1.0 : 0.0) + lap);
    }
  return out;
}

std::vector<std::vector<double>> daily_profiles(const std::vector<std::vector<double>>& series,
                                                std::size_t steps_per_day) {
  if (steps_per_day == 0) throw DomainError("daily_profiles: steps_per_day must be positive");
  std::vector<std::vector<double>> out;
  out.reserve(series.size());
  for (const auto& s : series) {
    if (s.empty()) throw InputError("daily_profiles: empty series");
    const std::size_t width = std::min(steps_per_day, s.size());
    std::vector<double> sum(width, 0.0);
    std::vector<std::size_t> count(width, 0);
    for (std::size_t t = 0; t < s.size(); ++t) {
      sum[t % steps_per_day] += s[t];
      ++count[t % steps_per_day];
    }
    for (std::size_t k = 0; k < width; ++k) sum[k] /= static_cast<double>(count[k]);
    out.push_back(std::move(sum));
  }
  return out;
}

TrafficGraph make_graph(Tensor a_connection, Tensor a_dtw, double alpha) {
  check_binary_symmetric(a_connection, "connection graph");
  check_binary_symmetric(a_dtw, "dtw graph");
  if (a_connection.shape() != a_dtw.shape()) throw DimensionError("connection and dtw graphs differ in size");
  TrafficGraph g;
  g.n_nodes = a_connection.dim(0);
  g.alpha = alpha;
  g.a_hat_connection = normalize_adjacency(a_connection, alpha);
  g.a_hat_dtw = normalize_adjacency(a_dtw, alpha);
  g.a_connection = std::move(a_connection);
  g.a_dtw = std::move(a_dtw);
  return g;
}

}  // namespace gramode
