#include "gramode/init.hpp"

#include <cmath>

namespace gramode {

Tensor init_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

Tensor init_normal(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = stddev * g(rng);
  return t;
}

}  // namespace gramode
