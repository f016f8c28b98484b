#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gramode {

struct Metrics {
  double mae = 0.0;
  // NaN when no target exceeds the mask threshold.
  double mape_percent = std::numeric_limits<double>::quiet_NaN();
  double rmse = 0.0;
  std::size_t n_evaluated = 0;  // points entering MAPE
  std::size_t n_total = 0;      // points entering MAE and RMSE

  bool mape_defined() const noexcept { return n_evaluated > 0; }
};

// MAE and RMSE over every point; MAPE over points with |y| > mask_threshold.
Metrics compute_metrics(std::span<const double> y_hat, std::span<const double> y, double mask_threshold = 0.1);

// Flow forecasts for a set of windows, W x N x L' row-major, in raw units.
struct Forecast {
  std::size_t nodes = 0;
  std::size_t horizon = 0;
  std::size_t history = 0;
  std::vector<std::size_t> starts;  // first history step of each window
  std::vector<double> prediction;
  std::vector<double> truth;

  std::size_t windows() const noexcept { return starts.size(); }
  std::size_t index(std::size_t w, std::size_t n, std::size_t h) const { return (w * nodes + n) * horizon + h; }
  Metrics metrics(double mask_threshold) const { return compute_metrics(prediction, truth, mask_threshold); }
};

void write_metrics_csv(const std::string& path, const std::vector<std::pair<std::string, Metrics>>& rows);

// time,truth,prediction for one node at one horizon step (1-based), one row
// per window; time is the absolute index of the forecast step.
void write_node_csv(const std::string& path, const Forecast& f, std::size_t node, std::size_t horizon_step);

std::string format_metric(double v);

}  // namespace gramode
