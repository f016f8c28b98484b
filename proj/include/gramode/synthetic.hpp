#pragma once

// Ring-road benchmark: each node carries a phase-shifted sinusoid plus
// seeded incident spikes that decay and travel downstream to the next node.

#include <cstdint>

#include "gramode/config.hpp"
#include "gramode/graph.hpp"
#include "gramode/io.hpp"

namespace gramode {

struct SyntheticSpec {
  std::size_t nodes = 10;
  std::size_t steps = 2000;
  std::size_t period = 48;
  double base = 100.0;
  double amplitude = 40.0;
  double spike_probability = 0.01;  // per node and step
  double spike_height = 60.0;
  double spike_decay = 4.0;         // e-folding time in steps
  std::size_t spike_lag = 3;        // steps until the spike reaches the next node
  double spike_carry = 0.6;         // fraction passed downstream
  double noise_std = 2.0;
  std::uint64_t seed = 2024;
};

Dataset make_synthetic(const SyntheticSpec& spec);
EdgeList ring_edges(std::size_t nodes);

// Reduced-width model sized for desk-scale runs on the benchmark: C = 4,
// two heads, one integrator step per unit, quantile DTW with epsilon 0.2
// over daily profiles of length spec.period, lr 1e-3, 10 epochs.
ModelConfig synthetic_config(const SyntheticSpec& spec);

}  // namespace gramode
