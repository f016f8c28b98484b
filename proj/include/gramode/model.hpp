#pragma once

// Two graph streams (connection, dtw), each with parallel channels of
// stacked TCN -> block -> TCN layers, fused by attention into a flow forecast.

#include <cstdint>
#include <string>
#include <vector>

#include "gramode/attention.hpp"
#include "gramode/autodiff.hpp"
#include "gramode/block.hpp"
#include "gramode/config.hpp"
#include "gramode/graph.hpp"
#include "gramode/tcn.hpp"

namespace gramode {

struct LayerParams {
  TcnStack tcn_pre;
  BlockParams block;
  TcnStack tcn_post;
};

// Node-space messages of every block for one forward pass, in
// stream/channel/layer order.
struct ModuleTrace {
  std::vector<std::string> names;  // "connection/1/1"
  std::vector<Tensor> gm, lm, em;  // empty tensor when the module is off
};

// Channel means of one window's block messages at one node, each of length L.
struct ModuleSeries {
  std::string name;
  std::vector<double> gm, lm, em;  // empty when the module is off
};

std::vector<ModuleSeries> module_series(const ModuleTrace& trace, std::size_t window, std::size_t node);
// Columns pipeline,time,gm,lm,em; a disabled module leaves its column empty.
void write_module_csv(const std::string& path, const std::vector<ModuleSeries>& series);

class Model {
 public:
  static const std::vector<std::string>& stream_names();

  // Validates cfg and initializes every parameter from seed.
  Model(const ModelConfig& cfg, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }
  ParamStore& params() noexcept { return store_; }
  const ParamStore& params() const noexcept { return store_; }

  // x: (B, N, L, C_raw) -> (B, N, L').
  Var forward(Tape& tape, const Var& x, const TrafficGraph& graph, ModuleTrace* trace = nullptr) const;

  // In float32 precision, rounds every parameter to the nearest float.
  void apply_precision();

 private:
  std::string pipeline_prefix(std::size_t stream, std::size_t channel, std::size_t layer) const;

  ModelConfig cfg_;
  ParamStore store_;
  Parameter* embed_w_ = nullptr;
  Parameter* embed_b_ = nullptr;
  // layers_[stream][channel][layer]
  std::vector<std::vector<std::vector<LayerParams>>> layers_;
  AttentionParams fusion_;
  Parameter* head_w_ = nullptr;
  Parameter* head_b_ = nullptr;
};

// Layer step in isolation (exposed for tests): TCN -> block -> TCN.
Var gramode_layer_forward(Tape& tape, const Var& x, const Tensor& a_hat, const LayerParams& p,
                          const ModelConfig& cfg, BlockOutput* messages = nullptr);

}  // namespace gramode
