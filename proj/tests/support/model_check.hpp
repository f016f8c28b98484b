#pragma once

// End-to-end finite-difference check of the full model, shared by the unit
// and acceptance suites.

#include <chrono>
#include <random>

#include "gramode/model.hpp"
#include "gramode/trainer.hpp"
#include "support/gradcheck.hpp"

namespace gramode::testing {

inline ModelConfig gradcheck_model_config(const std::string& variant = "full") {
  ModelConfig cfg;
  cfg.n_nodes = 4;
  cfg.history = 8;
  cfg.horizon = 4;
  cfg.latent_len = 2;
  cfg.channels = 4;
  cfg.heads = 2;
  cfg.precision = Precision::float64;
  cfg.integrator.steps_per_unit = 2;
  cfg.ablation = Ablation::variant(variant);
  return cfg;
}

inline TrafficGraph toy_graph(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  EdgeList ring;
  for (std::size_t i = 0; i < n; ++i) ring.emplace_back(i, (i + 1) % n);
  Tensor dtw({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) dtw.at({i, j}) = dtw.at({j, i}) = coin(rng) ? 1.0 : 0.0;
  return make_graph(build_connection_adjacency(ring, n), dtw, 0.4);
}

struct EndToEndCheck {
  std::vector<GradCheckEntry> entries;
  double seconds = 0.0;
  std::size_t parameters = 0;
};

// Every parameter path gets two directional checks and two sampled elements.
inline EndToEndCheck end_to_end_gradcheck(const std::string& variant = "full", std::uint64_t seed = 3) {
  const ModelConfig cfg = gradcheck_model_config(variant);
  Model model(cfg, seed);
  const TrafficGraph g = toy_graph(cfg.n_nodes, seed);
  std::mt19937_64 rng(seed + 1);
  const std::size_t batch = 2;
  const Tensor x = random_tensor({batch, cfg.n_nodes, cfg.history, cfg.raw_channels}, rng);
  const Tensor y = random_tensor({batch, cfg.n_nodes, cfg.horizon}, rng, -2.0, 2.0);
  const auto t0 = std::chrono::steady_clock::now();
  EndToEndCheck out;
  GradCheckOptions opt;
  opt.max_per_param = 2;
  opt.directions = 2;
  opt.seed = seed;
  out.entries = gradcheck(
      model.params(), [&](Tape& tape) { return huber_loss(model.forward(tape, tape.constant(x), g), y, 1.0); }, opt);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.parameters = model.params().total_elements();
  return out;
}

}  // namespace gramode::testing
