#include "gramode/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <json.hpp>
#include <sstream>

#include "gramode/errors.hpp"

namespace gramode {
namespace {

using json = nlohmann::json;

const std::map<std::string, double> kDatasetRates = {
    {"PEMS03", 1e-4}, {"PEMS04", 1e-4}, {"PEMS07", 1e-5},
    {"PEMS08", 1e-5}, {"PEMS-BAY", 1e-4}, {"METR-LA", 1e-4},
};

const std::vector<std::string> kSplitOrders = {"T_X", "TX_", "_TX", "XT_", "_XT", "X_T"};

template <typename E>
struct EnumNames {
  std::vector<std::pair<E, std::string>> items;
  std::string name(E e) const {
    for (const auto& [v, n] : items)
      if (v == e) return n;
    return "?";
  }
  bool parse(const std::string& s, E& out) const {
    for (const auto& [v, n] : items)
      if (n == s) {
        out = v;
        return true;
      }
    return false;
  }
};

const EnumNames<DtwMode> kDtwModes{{{DtwMode::threshold, "threshold"}, {DtwMode::quantile, "quantile"}}};
const EnumNames<Integrator> kIntegrators{{{Integrator::euler, "euler"}, {Integrator::rk4, "rk4"}}};
const EnumNames<Activation> kActivations{{{Activation::sigmoid, "sigmoid"}, {Activation::relu, "relu"}}};
const EnumNames<Precision> kPrecisions{{{Precision::float32, "float32"}, {Precision::float64, "float64"}}};

json to_tree(const ModelConfig& c) {
  json j;
  j["n_nodes"] = c.n_nodes;
  j["history"] = c.history;
  j["horizon"] = c.horizon;
  j["latent_len"] = c.latent_len;
  j["channels"] = c.channels;
  j["raw_channels"] = c.raw_channels;
  j["heads"] = c.heads;
  j["parallel_channels"] = c.parallel_channels;
  j["layers"] = c.layers;
  j["precision"] = kPrecisions.name(c.precision);
  j["graph"] = {{"alpha", c.graph.alpha},
                {"epsilon", c.graph.epsilon},
                {"dtw_mode", kDtwModes.name(c.graph.dtw_mode)},
                {"dtw_series", c.graph.dtw_series},
                {"steps_per_day", c.graph.steps_per_day}};
  j["integrator"] = {{"method", kIntegrators.name(c.integrator.method)},
                     {"t_end_global", c.integrator.t_end_global},
                     {"steps_per_unit", c.integrator.steps_per_unit},
                     {"local_time_offset", c.integrator.local_time_offset}};
  j["block"] = {{"alpha_res", c.block.alpha_res},
                {"beta_res", c.block.beta_res},
                {"temporal_init_std", c.block.temporal_init_std}};
  j["tcn"] = {{"kernel_size", c.tcn.kernel_size},
              {"depth", c.tcn.depth},
              {"activation", kActivations.name(c.tcn.activation)}};
  j["ablation"] = {{"edge", c.ablation.edge},     {"local", c.ablation.local}, {"share", c.ablation.share},
                   {"filter", c.ablation.filter}, {"agg", c.ablation.agg},     {"res", c.ablation.res},
                   {"attention", c.ablation.attention}};
  j["train"] = {{"seed", c.train.seed},
                {"learning_rate", c.train.learning_rate},
                {"weight_decay", c.train.weight_decay},
                {"batch_size", c.train.batch_size},
                {"epochs", c.train.epochs},
                {"patience", c.train.patience},
                {"huber_delta", c.train.huber_delta},
                {"dataset", c.train.dataset},
                {"split_order", c.train.split_order},
                {"mape_threshold", c.train.mape_threshold},
                {"noise_gamma_sq", c.train.noise_gamma_sq},
                {"noise_ratio", c.train.noise_ratio}};
  return j;
}

// Reads a JSON object into a struct field by field, recording type errors
// and unknown keys instead of stopping at the first one.
class Reader {
 public:
  Reader(const json& obj, std::string prefix, std::vector<std::string>& errors)
      : obj_(obj), prefix_(std::move(prefix)), errors_(errors) {
    if (!obj_.is_object()) errors_.push_back(where("") + "expected an object");
  }
  ~Reader() = default;

  template <typename T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    if (!obj_.is_object() || !obj_.contains(key)) return;
    const json& v = obj_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::runtime_error("expected a boolean");
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw std::runtime_error("expected a nonnegative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::runtime_error("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw std::runtime_error("expected a string");
      }
      out = v.get<T>();
    } catch (const std::exception& e) {
      errors_.push_back(where(key) + e.what());
    }
  }

  template <typename E>
  void get_enum(const char* key, E& out, const EnumNames<E>& names) {
    std::string s;
    bool present = obj_.is_object() && obj_.contains(key);
    get(key, s);
    if (!present || s.empty()) return;
    if (!names.parse(s, out)) errors_.push_back(where(key) + "unknown value '" + s + "'");
  }

  void sub(const char* key, const std::function<void(Reader&)>& fn) {
    seen_.push_back(key);
    if (!obj_.is_object() || !obj_.contains(key)) return;
    Reader r(obj_.at(key), prefix_ + key + ".", errors_);
    fn(r);
    r.finish();
  }

  void finish() {
    if (!obj_.is_object()) return;
    for (const auto& [k, _] : obj_.items()) {
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end()) {
        errors_.push_back(where(k.c_str()) + "unknown key");
      }
    }
  }

 private:
  std::string where(const std::string& key) const { return "'" + prefix_ + key + "': "; }

  const json& obj_;
  std::string prefix_;
  std::vector<std::string>& errors_;
  std::vector<std::string> seen_;
};

std::string join(const std::vector<std::string>& lines) {
  std::string out = "invalid configuration:";
  for (const auto& l : lines) out += "\n  " + l;
  return out;
}

void collect_violations(const ModelConfig& c, std::vector<std::string>& e) {
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) e.push_back(msg);
  };
  need(c.n_nodes >= 1, "n_nodes must be positive");
  need(c.history >= 1, "history must be positive");
  need(c.horizon >= 1, "horizon must be positive");
  need(c.latent_len >= 1, "latent_len must be positive");
  need(c.latent_len >= 1 && c.history % c.latent_len == 0, "history must be divisible by latent_len");
  need(c.channels >= 1, "channels must be positive");
  need(c.raw_channels >= 1, "raw_channels must be positive");
  need(c.heads >= 1, "heads must be positive");
  need(c.heads >= 1 && c.fused_width() % c.heads == 0,
       "fused width 2 * parallel_channels * channels must be divisible by heads");
  need(c.parallel_channels >= 1, "parallel_channels must be positive");
  need(c.layers >= 1, "layers must be positive");
  need(c.graph.alpha > 0 && c.graph.alpha < 1, "graph.alpha must lie in (0, 1)");
  need(c.graph.epsilon >= 0, "graph.epsilon must be nonnegative");
  need(c.graph.dtw_mode != DtwMode::quantile || (c.graph.epsilon > 0 && c.graph.epsilon < 1),
       "graph.epsilon must lie in (0, 1) in quantile mode");
  need(c.graph.dtw_series == "daily_profile" || c.graph.dtw_series == "raw",
       "graph.dtw_series must be 'daily_profile' or 'raw'");
  need(c.graph.steps_per_day >= 1, "graph.steps_per_day must be positive");
  need(c.integrator.t_end_global >= 0, "integrator.t_end_global must be nonnegative");
  need(c.integrator.steps_per_unit >= 1, "integrator.steps_per_unit must be at least 1");
  need(c.integrator.local_time_offset >= 0, "integrator.local_time_offset must be nonnegative");
  need(c.block.temporal_init_std >= 0, "block.temporal_init_std must be nonnegative");
  need(c.tcn.kernel_size >= 1, "tcn.kernel_size must be positive");
  need(c.tcn.depth >= 1, "tcn.depth must be positive");
  need(c.train.learning_rate > 0, "train.learning_rate must be positive");
  need(c.train.weight_decay >= 0, "train.weight_decay must be nonnegative");
  need(c.train.batch_size >= 1, "train.batch_size must be positive");
  need(c.train.huber_delta > 0, "train.huber_delta must be positive");
  need(c.train.dataset.empty() || kDatasetRates.contains(c.train.dataset),
       "train.dataset '" + c.train.dataset + "' is not a known dataset name");
  need(std::find(kSplitOrders.begin(), kSplitOrders.end(), c.train.split_order) != kSplitOrders.end(),
       "train.split_order must be one of T_X, TX_, _TX, XT_, _XT, X_T");
  need(c.train.mape_threshold >= 0, "train.mape_threshold must be nonnegative");
  need(c.train.noise_gamma_sq >= 0, "train.noise_gamma_sq must be nonnegative");
  need(c.train.noise_ratio >= 0 && c.train.noise_ratio <= 1, "train.noise_ratio must lie in [0, 1]");
}

}  // namespace

Ablation Ablation::variant(const std::string& name) {
  const auto& names = variant_names();
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ConfigError("unknown ablation variant '" + name + "'");
  const auto level = static_cast<std::size_t>(it - names.begin());
  Ablation a;
  a.edge = level >= 1;
  a.local = level >= 2;
  a.share = level >= 3;
  a.filter = level >= 4;
  a.agg = level >= 5;
  a.res = level >= 6;
  a.attention = level >= 7;
  return a;
}

const std::vector<std::string>& Ablation::variant_names() {
  static const std::vector<std::string> names = {"base", "+E", "+L", "+share", "+cons", "+agg", "+res", "full"};
  return names;
}

double default_learning_rate(const std::string& dataset) {
  auto it = kDatasetRates.find(dataset);
  if (it == kDatasetRates.end()) throw ConfigError("no default learning rate for dataset '" + dataset + "'");
  return it->second;
}

void validate(const ModelConfig& c) {
  std::vector<std::string> errors;
  collect_violations(c, errors);
  if (!errors.empty()) throw ConfigError(join(errors));
}

std::string to_json(const ModelConfig& c) { return to_tree(c).dump(2); }

ModelConfig config_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ModelConfig c;
  std::vector<std::string> errors;
  bool lr_given = false;
  {
    Reader r(root, "", errors);
    r.get("n_nodes", c.n_nodes);
    r.get("history", c.history);
    r.get("horizon", c.horizon);
    r.get("latent_len", c.latent_len);
    r.get("channels", c.channels);
    r.get("raw_channels", c.raw_channels);
    r.get("heads", c.heads);
    r.get("parallel_channels", c.parallel_channels);
    r.get("layers", c.layers);
    r.get_enum("precision", c.precision, kPrecisions);
    r.sub("graph", [&](Reader& g) {
      g.get("alpha", c.graph.alpha);
      g.get("epsilon", c.graph.epsilon);
      g.get_enum("dtw_mode", c.graph.dtw_mode, kDtwModes);
      g.get("dtw_series", c.graph.dtw_series);
      g.get("steps_per_day", c.graph.steps_per_day);
    });
    r.sub("integrator", [&](Reader& g) {
      g.get_enum("method", c.integrator.method, kIntegrators);
      g.get("t_end_global", c.integrator.t_end_global);
      g.get("steps_per_unit", c.integrator.steps_per_unit);
      g.get("local_time_offset", c.integrator.local_time_offset);
    });
    r.sub("block", [&](Reader& g) {
      g.get("alpha_res", c.block.alpha_res);
      g.get("beta_res", c.block.beta_res);
      g.get("temporal_init_std", c.block.temporal_init_std);
    });
    r.sub("tcn", [&](Reader& g) {
      g.get("kernel_size", c.tcn.kernel_size);
      g.get("depth", c.tcn.depth);
      g.get_enum("activation", c.tcn.activation, kActivations);
    });
    r.sub("ablation", [&](Reader& g) {
      g.get("edge", c.ablation.edge);
      g.get("local", c.ablation.local);
      g.get("share", c.ablation.share);
      g.get("filter", c.ablation.filter);
      g.get("agg", c.ablation.agg);
      g.get("res", c.ablation.res);
      g.get("attention", c.ablation.attention);
    });
    r.sub("train", [&](Reader& g) {
      lr_given = root["train"].is_object() && root["train"].contains("learning_rate");
      g.get("seed", c.train.seed);
      g.get("learning_rate", c.train.learning_rate);
      g.get("weight_decay", c.train.weight_decay);
      g.get("batch_size", c.train.batch_size);
      g.get("epochs", c.train.epochs);
      g.get("patience", c.train.patience);
      g.get("huber_delta", c.train.huber_delta);
      g.get("dataset", c.train.dataset);
      g.get("split_order", c.train.split_order);
      g.get("mape_threshold", c.train.mape_threshold);
      g.get("noise_gamma_sq", c.train.noise_gamma_sq);
      g.get("noise_ratio", c.train.noise_ratio);
    });
    r.finish();
  }
  if (errors.empty() && !lr_given && kDatasetRates.contains(c.train.dataset)) {
    c.train.learning_rate = kDatasetRates.at(c.train.dataset);
  }
  collect_violations(c, errors);
  if (!errors.empty()) throw ConfigError(join(errors));
  return c;
}

ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

}  // namespace gramode
