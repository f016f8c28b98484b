#include "gramode/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <limits>

#include "gramode/errors.hpp"
#include "gramode/ops.hpp"

namespace gramode {
namespace {

double huber_value(double e, double delta) {
  const double a = std::abs(e);
  return a <= delta ? 0.5 * e * e : delta * (a - 0.5 * delta);
}

double huber_slope(double e, double delta) {
  if (std::abs(e) <= delta) return e;
  return e > 0 ? delta : -delta;
}

double mean_huber(const Forecast& f, double delta) {
  if (f.truth.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < f.truth.size(); ++i) s += huber_value(f.prediction[i] - f.truth[i], delta);
  return s / static_cast<double>(f.truth.size());
}

std::mt19937_64 derived_rng(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (std::uint64_t p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

void check_window_fits(const Dataset& d, std::size_t history, std::size_t horizon) {
  if (history == 0 || horizon == 0) throw InputError("history and horizon must be positive");
  if (d.steps < history + horizon) throw InputError("dataset shorter than one window");
}

}  // namespace

Splits split_dataset(std::size_t steps, std::size_t history, std::size_t horizon, const std::string& order) {
  std::string sorted = order;
  std::sort(sorted.begin(), sorted.end());
  if (order.size() != 3 || sorted != "TX_") {
    throw ConfigError("split order '" + order + "' is not a permutation of T_X");
  }
  const std::size_t n_train = steps * 6 / 10, n_val = steps * 2 / 10;
  const std::size_t need = history + horizon;
  const std::size_t n_test = steps - n_train - n_val;
  if (n_train < need || n_val < need || n_test < need) {
    throw InputError("series of " + std::to_string(steps) + " steps too short: each split needs " +
                     std::to_string(need) + " steps");
  }
  Splits s;
  std::size_t at = 0;
  for (char c : order) {
    Range& r = c == 'T' ? s.train : c == '_' ? s.val : s.test;
    const std::size_t len = c == 'T' ? n_train : c == '_' ? n_val : n_test;
    r = {at, at + len};
    at += len;
  }
  return s;
}

NormStats fit_norm(const Dataset& d, Range range) {
  if (range.size() == 0 || range.end > d.steps) throw InputError("fit_norm: empty or out-of-bounds range");
  NormStats s;
  s.mean.assign(d.channels, 0.0);
  s.std.assign(d.channels, 0.0);
  const double count = static_cast<double>(range.size() * d.nodes);
  for (std::size_t c = 0; c < d.channels; ++c) {
    double sum = 0.0;
    for (std::size_t t = range.begin; t < range.end; ++t)
      for (std::size_t n = 0; n < d.nodes; ++n) sum += d.at(t, n, c);
    const double mean = sum / count;
    double sq = 0.0;
    for (std::size_t t = range.begin; t < range.end; ++t)
      for (std::size_t n = 0; n < d.nodes; ++n) {
        const double e = d.at(t, n, c) - mean;
        sq += e * e;
      }
    const double sd = std::sqrt(sq / count);
    s.mean[c] = mean;
    s.std[c] = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? sd : 1.0;
  }
  return s;
}

double normalize(double v, const NormStats& s, std::size_t channel) { return (v - s.mean[channel]) / s.std[channel]; }

double denormalize(double v, const NormStats& s, std::size_t channel) { return v * s.std[channel] + s.mean[channel]; }

std::vector<std::size_t> window_starts(Range range, std::size_t history, std::size_t horizon) {
  std::vector<std::size_t> out;
  const std::size_t span = history + horizon;
  if (range.size() < span) return out;
  for (std::size_t s = range.begin; s + span <= range.end; ++s) out.push_back(s);
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> starts, std::size_t batch_size,
                                                   const std::uint64_t* shuffle_seed) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (shuffle_seed != nullptr) {
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(starts.begin(), starts.end(), rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < starts.size(); i += batch_size) {
    out.emplace_back(starts.begin() + static_cast<long>(i),
                     starts.begin() + static_cast<long>(std::min(starts.size(), i + batch_size)));
  }
  return out;
}

NoiseInjector::NoiseInjector(const std::vector<std::size_t>& train_starts, double gamma_sq, double ratio,
                             std::uint64_t seed)
    : gamma_sq_(gamma_sq), seed_(seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("noise ratio must lie in [0, 1]");
  if (!(gamma_sq >= 0.0) || !std::isfinite(gamma_sq)) throw ConfigError("noise variance must be finite and >= 0");
  const auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(train_starts.size())));
  if (k == 0) return;
  std::vector<std::size_t> pool = train_starts;
  auto rng = derived_rng({seed, 0x6d61736bULL});
  std::shuffle(pool.begin(), pool.end(), rng);
  selected_.assign(pool.begin(), pool.begin() + static_cast<long>(k));
  std::sort(selected_.begin(), selected_.end());
}

bool NoiseInjector::selected(std::size_t start) const {
  return std::binary_search(selected_.begin(), selected_.end(), start);
}

void NoiseInjector::apply(std::size_t start, std::vector<double>& x) const {
  if (!active() || !selected(start)) return;
  auto rng = derived_rng({seed_, 0x6e6f697365ULL, start});
  std::normal_distribution<double> dist(0.0, std::sqrt(gamma_sq_));
  for (auto& v : x) v += dist(rng);
}

WindowBatch assemble_batch(const Dataset& d, const std::vector<std::size_t>& starts, std::size_t history,
                           std::size_t horizon, const NormStats& norm, const NoiseInjector* noise) {
  check_window_fits(d, history, horizon);
  const std::size_t b = starts.size(), n = d.nodes, c = d.channels;
  WindowBatch wb;
  wb.x = Tensor({b, n, history, c});
  wb.y = Tensor({b, n, horizon});
  wb.starts = starts;
  std::vector<double> block(n * history * c);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t s = starts[i];
    if (s + history + horizon > d.steps) throw InputError("window at " + std::to_string(s) + " exceeds the series");
    for (std::size_t node = 0; node < n; ++node)
      for (std::size_t l = 0; l < history; ++l)
        for (std::size_t ch = 0; ch < c; ++ch) block[(node * history + l) * c + ch] = d.at(s + l, node, ch);
    if (noise != nullptr) noise->apply(s, block);
    double* x = wb.x.data().data() + i * block.size();
    for (std::size_t k = 0; k < block.size(); ++k) x[k] = normalize(block[k], norm, k % c);
    for (std::size_t node = 0; node < n; ++node)
      for (std::size_t h = 0; h < horizon; ++h) wb.y[(i * n + node) * horizon + h] = d.at(s + history + h, node, 0);
  }
  return wb;
}

TrafficGraph build_graphs(const Dataset& d, const EdgeList& edges, const ModelConfig& cfg) {
  const Splits sp = split_dataset(d.steps, cfg.history, cfg.horizon, cfg.train.split_order);
  auto series = d.node_series(0, sp.train.begin, sp.train.end);
  if (cfg.graph.dtw_series == "daily_profile") {
    series = daily_profiles(series, cfg.graph.steps_per_day);
  } else if (cfg.graph.dtw_series != "raw") {
    throw ConfigError("graph.dtw_series must be 'daily_profile' or 'raw'");
  }
  return make_graph(build_connection_adjacency(edges, d.nodes),
                    build_dtw_adjacency(series, cfg.graph.epsilon, cfg.graph.dtw_mode), cfg.graph.alpha);
}

Var huber_loss(const Var& y_hat, const Tensor& y, double delta) {
  if (y_hat.shape() != y.shape()) {
    throw DimensionError("huber_loss: prediction " + shape_str(y_hat.shape()) + " vs target " + shape_str(y.shape()));
  }
  if (!(delta > 0.0)) throw DomainError("huber_loss: delta must be positive");
  const Tensor& p = y_hat.value();
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += huber_value(p[i] - y[i], delta);
  const double inv = y.size() == 0 ? 0.0 : 1.0 / static_cast<double>(y.size());
  return y_hat.tape().record(Tensor::scalar(s * inv), {y_hat}, [y, delta, inv](BackwardContext& ctx) {
    Tensor* g = ctx.input_grad(0);
    const Tensor& p = ctx.input(0);
    const double up = ctx.grad().item() * inv;
    for (std::size_t i = 0; i < y.size(); ++i) (*g)[i] += up * huber_slope(p[i] - y[i], delta);
  });
}

Var denormalize_flow(const Var& y_hat, const NormStats& norm) {
  return add_scalar(scale(y_hat, norm.std[0]), norm.mean[0]);
}

AdamW::AdamW(ParamStore& store, double lr, double weight_decay, double beta1, double beta2, double eps)
    : store_(store), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const Parameter* p : store_.all()) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamW::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  const double shrink = 1.0 - lr_ * wd_;
  auto params = store_.all();
  if (params.size() != m_.size()) throw ContractError("AdamW: parameter set changed after construction");
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& w = params[k]->value;
    const Tensor& g = params[k]->grad;
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (wd_ != 0.0) w[i] *= shrink;
      m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

Forecast predict_range(const Model& model, const Dataset& d, const TrafficGraph& g, Range range,
                       const NormStats& norm, std::size_t batch_size) {
  const ModelConfig& cfg = model.config();
  Forecast f;
  f.nodes = d.nodes;
  f.horizon = cfg.horizon;
  f.history = cfg.history;
  f.starts = window_starts(range, cfg.history, cfg.horizon);
  f.prediction.reserve(f.starts.size() * f.nodes * f.horizon);
  f.truth.reserve(f.prediction.capacity());
  for (const auto& batch : make_batches(f.starts, batch_size)) {
    WindowBatch wb = assemble_batch(d, batch, cfg.history, cfg.horizon, norm);
    Tape tape;
    Var out = denormalize_flow(model.forward(tape, tape.constant(std::move(wb.x)), g), norm);
    const auto& v = out.value().data();
    f.prediction.insert(f.prediction.end(), v.begin(), v.end());
    f.truth.insert(f.truth.end(), wb.y.data().begin(), wb.y.data().end());
  }
  return f;
}

Forecast persistence_forecast(const Dataset& d, Range range, std::size_t history, std::size_t horizon) {
  Forecast f;
  f.nodes = d.nodes;
  f.horizon = horizon;
  f.history = history;
  f.starts = window_starts(range, history, horizon);
  for (std::size_t s : f.starts)
    for (std::size_t n = 0; n < d.nodes; ++n)
      for (std::size_t h = 0; h < horizon; ++h) {
        f.prediction.push_back(d.at(s + history - 1, n, 0));
        f.truth.push_back(d.at(s + history + h, n, 0));
      }
  return f;
}

void write_log_header(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  out << "epoch,split,loss,mae,mape,rmse,seconds\n";
}

void append_log(const std::string& path, const EpochLog& e) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw InputError("cannot open '" + path + "' for appending");
  out << e.epoch << ',' << e.split << ',' << format_metric(e.loss) << ',' << format_metric(e.metrics.mae) << ','
      << format_metric(e.metrics.mape_percent) << ',' << format_metric(e.metrics.rmse) << ','
      << format_metric(e.seconds) << '\n';
}

FitResult fit(Model& model, const Dataset& d, const TrafficGraph& g, const FitOptions& opt) {
  const ModelConfig& cfg = model.config();
  const TrainConfig& tc = cfg.train;
  if (d.nodes != cfg.n_nodes) {
    throw ConfigError("dataset has " + std::to_string(d.nodes) + " nodes, config expects " +
                      std::to_string(cfg.n_nodes));
  }
  if (d.channels != cfg.raw_channels) {
    throw ConfigError("dataset has " + std::to_string(d.channels) + " channels, config expects " +
                      std::to_string(cfg.raw_channels));
  }
  const std::clock_t cpu0 = std::clock();
  FitResult r;
  r.splits = split_dataset(d.steps, cfg.history, cfg.horizon, tc.split_order);
  r.norm = fit_norm(d, r.splits.train);
  // Checkpoints hold float32 records; rounding here keeps a reload exact.
  for (auto* v : {&r.norm.mean, &r.norm.std})
    for (double& x : *v) x = static_cast<float>(x);
  const auto train_starts = window_starts(r.splits.train, cfg.history, cfg.horizon);
  const NoiseInjector noise(train_starts, tc.noise_gamma_sq, tc.noise_ratio, tc.seed);

  ParamStore& store = model.params();
  AdamW adam(store, tc.learning_rate, tc.weight_decay);
  std::vector<Tensor> best = store.snapshot();
  double best_mae = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  const std::size_t epochs = opt.max_epochs != 0 ? opt.max_epochs : tc.epochs;
  if (!opt.log_path.empty()) write_log_header(opt.log_path);

  auto emit = [&](EpochLog e) {
    if (!opt.log_path.empty()) append_log(opt.log_path, e);
    if (opt.on_epoch) opt.on_epoch(e);
    r.log.push_back(std::move(e));
  };

  for (std::size_t epoch = 1; epoch <= epochs && !r.diverged; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t order_seed = derived_rng({tc.seed, epoch})();
    double loss_sum = 0.0;
    Forecast seen;
    seen.nodes = d.nodes;
    seen.horizon = cfg.horizon;
    try {
      for (const auto& batch : make_batches(train_starts, tc.batch_size, &order_seed)) {
        WindowBatch wb = assemble_batch(d, batch, cfg.history, cfg.horizon, r.norm, &noise);
        Tape tape;
        Var y_hat = denormalize_flow(model.forward(tape, tape.constant(std::move(wb.x)), g), r.norm);
        Var loss = huber_loss(y_hat, wb.y, tc.huber_delta);
        const double lv = loss.value().item();
        if (!std::isfinite(lv)) throw DivergenceError("non-finite training loss in epoch " + std::to_string(epoch));
        loss_sum += lv * static_cast<double>(batch.size());
        const auto& p = y_hat.value().data();
        seen.prediction.insert(seen.prediction.end(), p.begin(), p.end());
        seen.truth.insert(seen.truth.end(), wb.y.data().begin(), wb.y.data().end());
        store.zero_grad();
        tape.backward(loss);
        adam.step();
        for (const Parameter* q : store.all()) {
          if (!q->value.all_finite()) {
            throw DivergenceError("non-finite parameter '" + q->path + "' after epoch " + std::to_string(epoch) +
                                  " update");
          }
        }
        model.apply_precision();
      }
    } catch (const DivergenceError& e) {
      r.diverged = true;
      r.divergence = e.what();
      break;
    }
    r.epochs_run = epoch;
    const double train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    emit({epoch, "train", loss_sum / static_cast<double>(train_starts.size()), seen.metrics(tc.mape_threshold),
          train_seconds});

    const auto t1 = std::chrono::steady_clock::now();
    Forecast val;
    try {
      val = predict_range(model, d, g, r.splits.val, r.norm, tc.batch_size);
    } catch (const DivergenceError& e) {
      r.diverged = true;
      r.divergence = e.what();
      break;
    }
    const Metrics vm = val.metrics(tc.mape_threshold);
    emit({epoch, "val", mean_huber(val, tc.huber_delta), vm,
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count()});
    if (!std::isfinite(vm.mae)) {
      r.diverged = true;
      r.divergence = "non-finite validation MAE in epoch " + std::to_string(epoch);
      break;
    }
    if (vm.mae < best_mae) {
      best_mae = vm.mae;
      best = store.snapshot();
      r.best_epoch = epoch;
      r.best_val = vm;
      since_best = 0;
      if (!opt.checkpoint_path.empty()) save_checkpoint(opt.checkpoint_path, model, r.norm);
    } else if (++since_best >= tc.patience) {
      break;
    }
  }

  store.restore(best);
  if (r.best_epoch > 0) {
    const auto t2 = std::chrono::steady_clock::now();
    const Forecast test = predict_range(model, d, g, r.splits.test, r.norm, tc.batch_size);
    r.test = test.metrics(tc.mape_threshold);
    emit({r.best_epoch, "test", mean_huber(test, tc.huber_delta), r.test,
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t2).count()});
  }
  r.cpu_seconds = static_cast<double>(std::clock() - cpu0) / CLOCKS_PER_SEC;
  return r;
}

}  // namespace gramode
