#pragma once

#include <random>

#include "gramode/tensor.hpp"

namespace gramode {

using Rng = std::mt19937_64;

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor init_fan_in(Shape shape, std::size_t fan_in, Rng& rng);
Tensor init_normal(Shape shape, double stddev, Rng& rng);

}  // namespace gramode
