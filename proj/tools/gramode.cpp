// gramode: build-graph, train, eval, predict and make-synthetic commands.

#include <CLI11.hpp>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "gramode/config.hpp"
#include "gramode/errors.hpp"
#include "gramode/evaluator.hpp"
#include "gramode/graph.hpp"
#include "gramode/io.hpp"
#include "gramode/kernels.hpp"
#include "gramode/model.hpp"
#include "gramode/synthetic.hpp"
#include "gramode/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace gramode;

namespace {

constexpr int kExitError = 1;
constexpr int kExitDiverged = 3;

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw InputError("write to '" + path.string() + "' failed");
}

class Manifest {
 public:
  Manifest(std::string command, const fs::path& outdir, std::string file = "manifest.json")
      : outdir_(outdir), file_(std::move(file)) {
    if (!outdir_.empty()) fs::create_directories(outdir_);
    doc_["command"] = std::move(command);
    doc_["output_dir"] = outdir_.string();
  }
  void set(const std::string& key, json value) { doc_[key] = std::move(value); }
  void start() {
    doc_["started_at"] = utc_now();
    flush();
  }
  void finish(const std::string& status) {
    doc_["finished_at"] = utc_now();
    doc_["status"] = status;
    flush();
  }

 private:
  void flush() const { write_text(outdir_ / file_, doc_.dump(2) + "\n"); }
  fs::path outdir_;
  std::string file_;
  json doc_;
};

void apply_thread_cap() {
  const char* env = std::getenv("GRAMODE_THREADS");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("GRAMODE_THREADS must be a positive integer, got '") + env + "'");
  kernels::set_max_threads(static_cast<int>(n));
}

std::pair<double, double> spectrum(const Tensor& a) {
  const auto n = static_cast<Eigen::Index>(a.dim(0));
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = a[static_cast<std::size_t>(i * n + j)];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

std::size_t undirected_edges(const Tensor& a) {
  std::size_t e = 0;
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = i + 1; j < a.dim(0); ++j) e += a.at({i, j}) != 0.0;
  return e;
}

// --- build-graph -----------------------------------------------------------
struct BuildGraphArgs {
  std::string dataset, adjacency, config, out;
};

// The manifest and resolved config go next to the cache as
// <cache>.manifest.json and <cache>.config.json.
int build_graph(const BuildGraphArgs& a) {
  const fs::path out = a.out;
  Manifest manifest("build-graph", out.parent_path(), out.filename().string() + ".manifest.json");
  manifest.set("config", a.config);
  manifest.set("dataset", a.dataset);
  manifest.set("adjacency", a.adjacency);
  manifest.set("graphs", a.out);
  ModelConfig resolved = load_config(a.config);
  const Dataset d = read_stdf(a.dataset);
  const EdgeList edges = read_adjacency_csv(a.adjacency, d.nodes);
  if (resolved.n_nodes == 0) resolved.n_nodes = d.nodes;
  if (resolved.n_nodes != d.nodes) {
    throw ConfigError("config n_nodes " + std::to_string(resolved.n_nodes) + " does not match dataset N " +
                      std::to_string(d.nodes));
  }
  manifest.set("seed", resolved.train.seed);
  write_text(out.string() + ".config.json", to_json(resolved) + "\n");
  manifest.start();
  const TrafficGraph g = build_graphs(d, edges, resolved);
  write_stgf(g, a.out);
  std::cerr << "nodes " << g.n_nodes << ", connection edges " << undirected_edges(g.a_connection)
            << ", dtw edges " << undirected_edges(g.a_dtw) << "\n";
  bool ok = true;
  for (const auto& [name, m] : {std::pair<const char*, const Tensor*>{"connection", &g.a_hat_connection},
                                {"dtw", &g.a_hat_dtw}}) {
    const auto [lo, hi] = spectrum(*m);
    const bool inside = lo >= -1e-9 && hi <= 2.0 * g.alpha + 1e-9;
    ok = ok && inside;
    std::cerr << name << " spectrum [" << lo << ", " << hi << "] " << (inside ? "within" : "OUTSIDE") << " [0, "
              << 2.0 * g.alpha << "]\n";
  }
  if (!ok) throw GraphError("normalized adjacency spectrum outside [0, 2 alpha]");
  manifest.finish("ok");
  return 0;
}

// --- train -----------------------------------------------------------------
struct TrainArgs {
  std::string config, dataset, graphs, out;
  std::optional<std::string> ablation;
  std::optional<double> noise_gamma_sq, noise_ratio;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
};

int train(const TrainArgs& a) {
  ModelConfig cfg = load_config(a.config);
  if (a.ablation) cfg.ablation = Ablation::variant(*a.ablation);
  if (a.noise_gamma_sq) cfg.train.noise_gamma_sq = *a.noise_gamma_sq;
  if (a.noise_ratio) cfg.train.noise_ratio = *a.noise_ratio;
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  const fs::path out = a.out;
  Manifest manifest("train", out);
  manifest.set("config", a.config);
  manifest.set("dataset", a.dataset);
  manifest.set("graphs", a.graphs);
  const Dataset d = read_stdf(a.dataset);
  if (cfg.n_nodes == 0) cfg.n_nodes = d.nodes;
  validate(cfg);
  manifest.set("seed", cfg.train.seed);
  write_text(out / "config.json", to_json(cfg) + "\n");
  manifest.start();

  const TrafficGraph g = read_stgf(a.graphs);
  Model model(cfg, cfg.train.seed);
  FitOptions opt;
  opt.log_path = (out / "log.csv").string();
  opt.checkpoint_path = (out / "best.grmd").string();
  opt.on_epoch = [](const EpochLog& e) {
    std::cerr << "epoch " << e.epoch << " " << e.split << " loss " << e.loss << " mae " << e.metrics.mae << " rmse "
              << e.metrics.rmse << " (" << e.seconds << " s)\n";
  };
  std::cerr << "training " << model.params().total_elements() << " parameters\n";
  const FitResult r = fit(model, d, g, opt);
  write_metrics_csv((out / "metrics.csv").string(), {{"val", r.best_val}, {"test", r.test}});
  std::cerr << "best epoch " << r.best_epoch << ", test mae " << r.test.mae << ", cpu " << r.cpu_seconds << " s\n";
  if (r.diverged) {
    std::cerr << "diverged: " << r.divergence << "\n";
    manifest.finish("diverged");
    return kExitDiverged;
  }
  manifest.finish("ok");
  return 0;
}

// --- eval / predict --------------------------------------------------------
struct EvalArgs {
  std::string checkpoint, dataset, graphs, out;
  std::vector<std::size_t> nodes;
  std::size_t horizon = 1;
  std::string split = "test";
  bool dump_modules = false;
  std::size_t window = 0;
};

struct Loaded {
  std::unique_ptr<Model> model;
  NormStats norm;
  Dataset data;
  TrafficGraph graph;
  Splits splits;
};

Loaded load_for_inference(const EvalArgs& a, Manifest& manifest) {
  manifest.set("checkpoint", a.checkpoint);
  manifest.set("dataset", a.dataset);
  manifest.set("graphs", a.graphs);
  Loaded l;
  l.model = load_checkpoint(a.checkpoint, l.norm);
  const ModelConfig& cfg = l.model->config();
  manifest.set("seed", cfg.train.seed);
  write_text(fs::path(a.out) / "config.json", to_json(cfg) + "\n");
  l.data = read_stdf(a.dataset);
  if (l.data.nodes != cfg.n_nodes) {
    throw ConfigError("checkpoint expects " + std::to_string(cfg.n_nodes) + " nodes, dataset has " +
                      std::to_string(l.data.nodes));
  }
  l.graph = read_stgf(a.graphs);
  if (l.graph.n_nodes != cfg.n_nodes) {
    throw ConfigError("checkpoint expects " + std::to_string(cfg.n_nodes) + " nodes, graph cache has " +
                      std::to_string(l.graph.n_nodes));
  }
  l.splits = split_dataset(l.data.steps, cfg.history, cfg.horizon, cfg.train.split_order);
  manifest.start();
  return l;
}

Range pick_split(const Splits& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  return s.test;
}

void write_outputs(const EvalArgs& a, const Loaded& l, const Forecast& f) {
  const fs::path out = a.out;
  for (std::size_t node : a.nodes) {
    write_node_csv((out / ("node_" + std::to_string(node) + ".csv")).string(), f, node, a.horizon);
  }
  if (!a.dump_modules) return;
  const ModelConfig& cfg = l.model->config();
  const Range r = pick_split(l.splits, a.split);
  const auto starts = window_starts(r, cfg.history, cfg.horizon);
  if (a.window >= starts.size()) throw InputError("window " + std::to_string(a.window) + " out of range");
  WindowBatch wb = assemble_batch(l.data, {starts[a.window]}, cfg.history, cfg.horizon, l.norm);
  Tape tape;
  ModuleTrace trace;
  l.model->forward(tape, tape.constant(std::move(wb.x)), l.graph, &trace);
  const std::vector<std::size_t> nodes = a.nodes.empty() ? std::vector<std::size_t>{0} : a.nodes;
  for (std::size_t node : nodes) {
    write_module_csv((out / ("modules_node_" + std::to_string(node) + ".csv")).string(),
                     module_series(trace, 0, node));
  }
}

int eval(const EvalArgs& a) {
  Manifest manifest("eval", a.out);
  Loaded l = load_for_inference(a, manifest);
  const ModelConfig& cfg = l.model->config();
  const double mask = cfg.train.mape_threshold;
  const std::size_t bs = cfg.train.batch_size;
  const Forecast val = predict_range(*l.model, l.data, l.graph, l.splits.val, l.norm, bs);
  const Forecast test = predict_range(*l.model, l.data, l.graph, l.splits.test, l.norm, bs);
  const Forecast naive = persistence_forecast(l.data, l.splits.test, cfg.history, cfg.horizon);
  write_metrics_csv((fs::path(a.out) / "metrics.csv").string(),
                    {{"val", val.metrics(mask)}, {"test", test.metrics(mask)}, {"test_persistence", naive.metrics(mask)}});
  std::cerr << "test mae " << test.metrics(mask).mae << ", persistence " << naive.metrics(mask).mae << "\n";
  write_outputs(a, l, a.split == "val" ? val : test);
  manifest.finish("ok");
  return 0;
}

int predict(const EvalArgs& a) {
  Manifest manifest("predict", a.out);
  Loaded l = load_for_inference(a, manifest);
  const ModelConfig& cfg = l.model->config();
  const Forecast f =
      predict_range(*l.model, l.data, l.graph, pick_split(l.splits, a.split), l.norm, cfg.train.batch_size);
  std::ofstream out(fs::path(a.out) / "predictions.csv", std::ios::trunc);
  if (!out) throw InputError("cannot write predictions.csv");
  out << "time,node,step,prediction\n";
  for (std::size_t w = 0; w < f.windows(); ++w)
    for (std::size_t n = 0; n < f.nodes; ++n)
      for (std::size_t h = 0; h < f.horizon; ++h) {
        out << f.starts[w] + f.history + h << ',' << n << ',' << h + 1 << ','
            << format_metric(f.prediction[f.index(w, n, h)]) << '\n';
      }
  out.close();
  write_outputs(a, l, f);
  manifest.finish("ok");
  return 0;
}

// --- make-synthetic --------------------------------------------------------
int make_synthetic_cmd(const std::string& outdir, const SyntheticSpec& spec) {
  fs::create_directories(outdir);
  const Dataset d = make_synthetic(spec);
  write_stdf(d, (fs::path(outdir) / "synthetic.stdf").string());
  std::ofstream edges(fs::path(outdir) / "ring.csv", std::ios::trunc);
  edges << "from,to,cost\n";
  for (const auto& [i, j] : ring_edges(spec.nodes)) edges << i << ',' << j << ",1\n";
  edges.close();
  const ModelConfig cfg = synthetic_config(spec);
  write_text(fs::path(outdir) / "config.json", to_json(cfg) + "\n");
  std::cerr << "wrote " << d.steps << " x " << d.nodes << " series, ring edges and config to " << outdir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph ODE traffic forecasting"};
  app.require_subcommand(1);

  BuildGraphArgs bg;
  auto* c_bg = app.add_subcommand("build-graph", "Build and normalize both graphs into an STGF cache");
  c_bg->add_option("--dataset", bg.dataset, "STDF dataset")->required()->check(CLI::ExistingFile);
  c_bg->add_option("--adjacency", bg.adjacency, "Edge CSV (from,to,cost)")->required()->check(CLI::ExistingFile);
  c_bg->add_option("--config", bg.config, "Config JSON")->required()->check(CLI::ExistingFile);
  c_bg->add_option("--out", bg.out, "Output STGF path")->required();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train a model");
  c_tr->add_option("--config", tr.config, "Config JSON")->required()->check(CLI::ExistingFile);
  c_tr->add_option("--dataset", tr.dataset, "STDF dataset")->required()->check(CLI::ExistingFile);
  c_tr->add_option("--graphs", tr.graphs, "STGF graph cache")->required()->check(CLI::ExistingFile);
  c_tr->add_option("--out", tr.out, "Output directory")->required();
  c_tr->add_option("--ablation", tr.ablation, "Variant")->check(CLI::IsMember(Ablation::variant_names()));
  c_tr->add_option("--noise-gamma-sq", tr.noise_gamma_sq, "Noise variance on training histories");
  c_tr->add_option("--noise-ratio", tr.noise_ratio, "Fraction of training windows perturbed")
      ->check(CLI::Range(0.0, 1.0));
  c_tr->add_option("--seed", tr.seed, "Random seed");
  c_tr->add_option("--epochs", tr.epochs, "Maximum epochs")->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto add_inference = [&](CLI::App* c) {
    c->add_option("--checkpoint", ev.checkpoint, "GRMD checkpoint")->required()->check(CLI::ExistingFile);
    c->add_option("--dataset", ev.dataset, "STDF dataset")->required()->check(CLI::ExistingFile);
    c->add_option("--graphs", ev.graphs, "STGF graph cache")->required()->check(CLI::ExistingFile);
    c->add_option("--out", ev.out, "Output directory")->required();
    c->add_option("--node", ev.nodes, "Write node_<id>.csv for these nodes");
    c->add_option("--horizon", ev.horizon, "Forecast step for node dumps (1-based)")->check(CLI::PositiveNumber);
    c->add_option("--split", ev.split, "Split to dump")->check(CLI::IsMember({"train", "val", "test"}));
    c->add_flag("--dump-modules", ev.dump_modules, "Write per-block GM/LM/EM series");
    c->add_option("--window", ev.window, "Window index within the split for --dump-modules");
  };
  auto* c_ev = app.add_subcommand("eval", "Metrics of a checkpoint on the validation and test splits");
  add_inference(c_ev);
  auto* c_pr = app.add_subcommand("predict", "Forecasts of a checkpoint for one split");
  add_inference(c_pr);

  std::string syn_out;
  SyntheticSpec syn;
  auto* c_syn = app.add_subcommand("make-synthetic", "Write the ring-road benchmark dataset, edges and config");
  c_syn->add_option("--out", syn_out, "Output directory")->required();
  c_syn->add_option("--seed", syn.seed, "Generator seed")->capture_default_str();
  c_syn->add_option("--nodes", syn.nodes, "Ring size")->capture_default_str()->check(CLI::Range(2, 100000));
  c_syn->add_option("--steps", syn.steps, "Series length")->capture_default_str()->check(CLI::PositiveNumber);
  c_syn->add_option("--period", syn.period, "Sinusoid period in steps")->capture_default_str()->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  try {
    apply_thread_cap();
    if (*c_bg) return build_graph(bg);
    if (*c_tr) return train(tr);
    if (*c_ev) return eval(ev);
    if (*c_pr) return predict(ev);
    if (*c_syn) return make_synthetic_cmd(syn_out, syn);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
