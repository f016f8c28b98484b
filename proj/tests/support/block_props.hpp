#pragma once

// Randomized block invariant checks shared by the unit and acceptance suites.
// Each returns the number of violating instances out of `instances`.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "gramode/block.hpp"
#include "gramode/ops.hpp"
#include "support/gradcheck.hpp"

namespace gramode::testing {

inline ModelConfig toy_config(std::size_t n, std::size_t l, std::size_t lat, std::size_t c) {
  ModelConfig cfg;
  cfg.n_nodes = n;
  cfg.history = l;
  cfg.horizon = l;
  cfg.latent_len = lat;
  cfg.channels = c;
  cfg.heads = 2;
  cfg.precision = Precision::float64;
  cfg.integrator.steps_per_unit = 2;
  return cfg;
}

// |filtered LM - GM| <= |e| elementwise, up to the rounding of gm +/- e.
inline std::size_t filter_band_violations(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 2.0);
  std::uniform_int_distribution<std::size_t> dim(1, 5);
  std::size_t bad = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    Tape tape;
    Shape s{dim(rng), dim(rng), dim(rng), dim(rng)};
    Tensor lm(s), gm(s);
    for (auto& v : lm.data()) v = g(rng);
    for (auto& v : gm.data()) v = g(rng);
    const double e = t % 10 == 0 ? 0.0 : g(rng);
    Tensor out = message_filter(tape.constant(lm), tape.constant(gm), tape.constant(Tensor::scalar(e))).value();
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double slack = std::numeric_limits<double>::epsilon() * (std::abs(gm[i]) + std::abs(e));
      if (std::abs(out[i] - gm[i]) > std::abs(e) + slack) {
        ++bad;
        break;
      }
    }
  }
  return bad;
}

// aggregate(p) is bitwise unchanged under every ordering of its inputs.
inline std::size_t aggregate_permutation_violations(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 3.0);
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  std::size_t bad = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    Tape tape;
    Shape s{dim(rng), dim(rng), dim(rng), dim(rng) + 1};
    const std::size_t k = 2 + t % 2;
    std::vector<Var> parts;
    for (std::size_t i = 0; i < k; ++i) {
      Tensor p(s);
      for (auto& v : p.data()) v = g(rng);
      parts.push_back(tape.constant(std::move(p)));
    }
    const Tensor ref = aggregate(parts).value();
    std::vector<std::size_t> order(k);
    for (std::size_t i = 0; i < k; ++i) order[i] = i;
    while (std::next_permutation(order.begin(), order.end())) {
      std::vector<Var> perm;
      for (std::size_t i : order) perm.push_back(parts[i]);
      if (!identical(aggregate(perm).value(), ref)) {
        ++bad;
        break;
      }
    }
  }
  return bad;
}

// With one channel, aggregate of three parts equals their arithmetic mean.
inline double singleton_channel_worst(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 3.0);
  std::uniform_int_distribution<std::size_t> dim(1, 5);
  double worst_err = 0.0;
  for (std::size_t t = 0; t < instances; ++t) {
    Tape tape;
    Shape s{dim(rng), dim(rng), dim(rng), 1};
    std::vector<Var> parts;
    std::vector<Tensor> raw;
    for (int i = 0; i < 3; ++i) {
      Tensor p(s);
      for (auto& v : p.data()) v = g(rng);
      raw.push_back(p);
      parts.push_back(tape.constant(std::move(p)));
    }
    Tensor out = aggregate(parts).value();
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double mean = (raw[0][i] + raw[1][i] + raw[2][i]) / 3.0;
      worst_err = std::max(worst_err, std::abs(out[i] - mean));
    }
  }
  return worst_err;
}

// Zero state with zero biases leaves every message exactly zero.
inline std::size_t zero_fixed_point_violations(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> nd(1, 4), cd(1, 3);
  std::size_t bad = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t lat = 1 + t % 2;
    ModelConfig cfg = toy_config(nd(rng), 2 * lat, lat, cd(rng));
    cfg.integrator.method = t % 3 == 0 ? Integrator::euler : Integrator::rk4;
    ParamStore store;
    Rng prng(seed + t);
    BlockParams bp = make_block_params(store, "b", cfg, prng);
    Tape tape;
    BlockVars v = bind(tape, bp);
    const std::size_t b = 1 + t % 2;
    Var h = tape.constant(Tensor({b, cfg.n_nodes, cfg.history, cfg.channels}, 0.0));
    Tensor a_hat = Tensor::identity(cfg.n_nodes);
    for (auto& x : a_hat.data()) x *= cfg.graph.alpha;
    BlockOutput o = block_forward(h, a_hat, v, cfg);
    auto all_zero = [](const Tensor& x) {
      return std::all_of(x.data().begin(), x.data().end(), [](double d) { return d == 0.0; });
    };
    if (!all_zero(o.gm.value()) || !all_zero(o.lm.value()) || !all_zero(o.em.value())) ++bad;
  }
  return bad;
}

}  // namespace gramode::testing
