#include "gramode/evaluator.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "gramode/errors.hpp"

namespace gramode {

Metrics compute_metrics(std::span<const double> y_hat, std::span<const double> y, double mask_threshold) {
  if (y_hat.size() != y.size()) {
    throw DimensionError("compute_metrics: " + std::to_string(y_hat.size()) + " predictions for " +
                         std::to_string(y.size()) + " targets");
  }
  Metrics m;
  m.n_total = y.size();
  if (y.empty()) return m;
  double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = y_hat[i] - y[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    if (std::abs(y[i]) > mask_threshold) {
      pct_sum += std::abs(e / y[i]);
      ++m.n_evaluated;
    }
  }
  const double n = static_cast<double>(y.size());
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  if (m.n_evaluated > 0) m.mape_percent = pct_sum / static_cast<double>(m.n_evaluated) * 100.0;
  return m;
}

std::string format_metric(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_metrics_csv(const std::string& path, const std::vector<std::pair<std::string, Metrics>>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  out << "split,mae,mape,rmse,n_evaluated\n";
  for (const auto& [name, m] : rows) {
    out << name << ',' << format_metric(m.mae) << ',' << format_metric(m.mape_percent) << ','
        << format_metric(m.rmse) << ',' << m.n_evaluated << '\n';
  }
  if (!out) throw InputError("write to '" + path + "' failed");
}

void write_node_csv(const std::string& path, const Forecast& f, std::size_t node, std::size_t horizon_step) {
  if (node >= f.nodes) {
    throw InputError("node " + std::to_string(node) + " out of range for " + std::to_string(f.nodes) + " nodes");
  }
  if (horizon_step == 0 || horizon_step > f.horizon) {
    throw InputError("horizon step must lie in [1, " + std::to_string(f.horizon) + "]");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  out << "time,truth,prediction\n";
  for (std::size_t w = 0; w < f.windows(); ++w) {
    const std::size_t i = f.index(w, node, horizon_step - 1);
    out << f.starts[w] + f.history + horizon_step - 1 << ',' << format_metric(f.truth[i]) << ','
        << format_metric(f.prediction[i]) << '\n';
  }
  if (!out) throw InputError("write to '" + path + "' failed");
}

}  // namespace gramode
