#include "gramode/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "gramode/errors.hpp"

namespace gramode {

Dataset make_synthetic(const SyntheticSpec& s) {
  if (s.nodes < 2 || s.steps == 0 || s.period == 0) throw InputError("synthetic: need >= 2 nodes, steps and period");
  Dataset d;
  d.steps = s.steps;
  d.nodes = s.nodes;
  d.channels = 1;
  d.data.assign(s.steps * s.nodes, 0.0f);
  std::mt19937_64 rng(s.seed);
  std::bernoulli_distribution fire(s.spike_probability);
  std::normal_distribution<double> noise(0.0, s.noise_std);

  // Incidents: excitation[t][n] is the spike mass injected at (t, n).
  std::vector<double> excite(s.steps * s.nodes, 0.0);
  for (std::size_t t = 0; t < s.steps; ++t)
    for (std::size_t n = 0; n < s.nodes; ++n) {
      if (!fire(rng)) continue;
      double h = s.spike_height;
      std::size_t at = t, node = n;
      while (h > 1.0 && at < s.steps) {
        excite[at * s.nodes + node] += h;
        h *= s.spike_carry;
        at += s.spike_lag;
        node = (node + 1) % s.nodes;
      }
    }
  const double keep = std::exp(-1.0 / s.spike_decay);
  std::vector<double> level(s.nodes, 0.0);
  const double tau = 2.0 * std::numbers::pi;
  for (std::size_t t = 0; t < s.steps; ++t)
    for (std::size_t n = 0; n < s.nodes; ++n) {
      level[n] = level[n] * keep + excite[t * s.nodes + n];
      const double phase = tau * static_cast<double>(t) / static_cast<double>(s.period) +
                           tau * static_cast<double>(n) / static_cast<double>(s.nodes);
      const double v = s.base + s.amplitude * std::sin(phase) + level[n] + noise(rng);
      d.data[t * s.nodes + n] = static_cast<float>(v);
    }
  return d;
}

EdgeList ring_edges(std::size_t nodes) {
  EdgeList e;
  for (std::size_t i = 0; i < nodes; ++i) e.emplace_back(i, (i + 1) % nodes);
  return e;
}

ModelConfig synthetic_config(const SyntheticSpec& spec) {
  ModelConfig cfg;
  cfg.n_nodes = spec.nodes;
  cfg.channels = 4;
  cfg.heads = 2;
  cfg.integrator.steps_per_unit = 1;
  cfg.graph.dtw_mode = DtwMode::quantile;
  cfg.graph.epsilon = 0.2;
  cfg.graph.steps_per_day = spec.period;
  cfg.train.learning_rate = 1e-3;
  cfg.train.epochs = 10;
  return cfg;
}

}  // namespace gramode
