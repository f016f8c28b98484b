#pragma once

// Every hyperparameter of a run. Serialized as canonical JSON (sorted keys)
// into checkpoints and output directories; parsing rejects unknown keys and
// reports every problem in one ConfigError.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gramode/graph.hpp"

namespace gramode {

enum class Integrator { euler, rk4 };
enum class Activation { sigmoid, relu };
enum class Precision { float32, float64 };

struct GraphConfig {
  double alpha = 0.4;
  double epsilon = 0.1;
  DtwMode dtw_mode = DtwMode::threshold;
  std::string dtw_series = "daily_profile";  // or "raw"
  std::size_t steps_per_day = 288;
};

struct IntegratorSpec {
  Integrator method = Integrator::rk4;
  double t_end_global = 1.0;
  std::size_t steps_per_unit = 8;
  // Local grid is t_j = j + local_time_offset, j = 0 .. L/L'' - 1.
  double local_time_offset = 0.0;
};

struct BlockConfig {
  double alpha_res = 0.5;
  double beta_res = 0.5;
  // Standard deviation of the normal init of the shared temporal weights.
  double temporal_init_std = 0.1;
};

struct TcnConfig {
  std::size_t kernel_size = 3;
  std::size_t depth = 2;
  Activation activation = Activation::sigmoid;
};

// Module toggles. All on is the full model; the named variants switch them
// on cumulatively starting from base (all off).
struct Ablation {
  bool edge = true;
  bool local = true;
  bool share = true;
  bool filter = true;
  bool agg = true;
  bool res = true;
  bool attention = true;

  static Ablation variant(const std::string& name);  // base, +E, +L, +share, +cons, +agg, +res, full
  static const std::vector<std::string>& variant_names();
  bool operator==(const Ablation&) const = default;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 200;
  std::size_t patience = 10;
  double huber_delta = 1.0;
  std::string dataset;        // selects a default learning rate when set
  std::string split_order = "T_X";
  double mape_threshold = 0.1;
  double noise_gamma_sq = 0.0;
  double noise_ratio = 0.0;
};

struct ModelConfig {
  std::size_t n_nodes = 0;
  std::size_t history = 12;       // L
  std::size_t horizon = 12;       // L'
  std::size_t latent_len = 4;     // L''
  std::size_t channels = 64;      // C
  std::size_t raw_channels = 1;   // C_raw
  std::size_t heads = 12;
  std::size_t parallel_channels = 3;
  std::size_t layers = 2;
  Precision precision = Precision::float32;
  GraphConfig graph;
  IntegratorSpec integrator;
  BlockConfig block;
  TcnConfig tcn;
  Ablation ablation;
  TrainConfig train;

  // Feature width seen by the final attention: two streams of
  // parallel_channels * channels each.
  std::size_t fused_width() const { return 2 * parallel_channels * channels; }
};

// Learning rate for a known dataset name; throws ConfigError otherwise.
double default_learning_rate(const std::string& dataset);

// Throws ConfigError listing every violated constraint.
void validate(const ModelConfig& c);

std::string to_json(const ModelConfig& c);  // canonical: sorted keys, fixed formatting
ModelConfig config_from_json(const std::string& text);
ModelConfig load_config(const std::string& path);

}  // namespace gramode
