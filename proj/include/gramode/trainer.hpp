#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gramode/autodiff.hpp"
#include "gramode/evaluator.hpp"
#include "gramode/graph.hpp"
#include "gramode/io.hpp"
#include "gramode/model.hpp"

namespace gramode {

struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
  bool operator==(const Range&) const = default;
};

struct Splits {
  Range train, val, test;
};

// 6:2:2 contiguous split. order is a permutation of "T_X" (T train, _ val,
// X test) giving the temporal layout; every split must hold a full window.
Splits split_dataset(std::size_t steps, std::size_t history, std::size_t horizon, const std::string& order = "T_X");

// Population mean and std per channel over range; constant channels get std 1.
NormStats fit_norm(const Dataset& d, Range range);
double normalize(double v, const NormStats& s, std::size_t channel);
double denormalize(double v, const NormStats& s, std::size_t channel);

// Window starts for every maximal stride-1 window of range, in temporal order.
std::vector<std::size_t> window_starts(Range range, std::size_t history, std::size_t horizon);
// Groups starts into batches; shuffles first when seed is given.
std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> starts, std::size_t batch_size,
                                                   const std::uint64_t* shuffle_seed = nullptr);

// Additive N(0, gamma_sq) noise on the raw history of a seeded fraction of
// training windows. The noise of a window depends only on (seed, window start).
class NoiseInjector {
 public:
  NoiseInjector() = default;
  NoiseInjector(const std::vector<std::size_t>& train_starts, double gamma_sq, double ratio, std::uint64_t seed);

  bool active() const noexcept { return gamma_sq_ > 0.0 && !selected_.empty(); }
  bool selected(std::size_t start) const;
  std::size_t n_selected() const noexcept { return selected_.size(); }
  // x holds one raw history block (N x L x C_raw) for the window at start.
  void apply(std::size_t start, std::vector<double>& x) const;

 private:
  std::vector<std::size_t> selected_;  // sorted window starts
  double gamma_sq_ = 0.0;
  std::uint64_t seed_ = 0;
};

struct WindowBatch {
  Tensor x;  // B x N x L x C_raw, normalized
  Tensor y;  // B x N x L', raw flow
  std::vector<std::size_t> starts;
};

WindowBatch assemble_batch(const Dataset& d, const std::vector<std::size_t>& starts, std::size_t history,
                           std::size_t horizon, const NormStats& norm, const NoiseInjector* noise = nullptr);

// Both graphs from the flow channel of the training split: the DTW series is
// either the raw split or its daily profile, per cfg.graph.
TrafficGraph build_graphs(const Dataset& d, const EdgeList& edges, const ModelConfig& cfg);

// Mean over elements of the piecewise Huber value of y_hat - y.
Var huber_loss(const Var& y_hat, const Tensor& y, double delta);

// Model output (B x N x L', normalized flow) mapped back to raw flow units.
Var denormalize_flow(const Var& y_hat, const NormStats& norm);

class AdamW {
 public:
  AdamW(ParamStore& store, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8);
  // Applies one update from the gradients currently held by the store.
  void step();
  std::size_t steps() const noexcept { return t_; }

 private:
  ParamStore& store_;
  double lr_, wd_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Forward-only predictions in raw flow units for every window of range.
Forecast predict_range(const Model& model, const Dataset& d, const TrafficGraph& g, Range range,
                       const NormStats& norm, std::size_t batch_size);
// y_hat = last observed flow, repeated across the horizon.
Forecast persistence_forecast(const Dataset& d, Range range, std::size_t history, std::size_t horizon);

struct EpochLog {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  Metrics metrics;
  double seconds = 0.0;
};

struct FitOptions {
  std::string log_path;         // CSV log, appended per epoch when set
  std::string checkpoint_path;  // best checkpoint, rewritten on improvement when set
  std::size_t max_epochs = 0;   // overrides config epochs when nonzero
  std::function<void(const EpochLog&)> on_epoch;
};

struct FitResult {
  NormStats norm;
  Splits splits;
  std::vector<EpochLog> log;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  Metrics best_val;
  Metrics test;  // of the best parameters
  bool diverged = false;
  std::string divergence;
  double cpu_seconds = 0.0;
};

// Trains model in place; on return the model holds the best-validation parameters.
FitResult fit(Model& model, const Dataset& d, const TrafficGraph& g, const FitOptions& opt = {});

void write_log_header(const std::string& path);
void append_log(const std::string& path, const EpochLog& e);

}  // namespace gramode
