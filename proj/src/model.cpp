#include "gramode/model.hpp"

#include <fstream>

#include "gramode/errors.hpp"
#include "gramode/ops.hpp"

namespace gramode {

const std::vector<std::string>& Model::stream_names() {
  static const std::vector<std::string> names = {"connection", "dtw"};
  return names;
}

std::string Model::pipeline_prefix(std::size_t stream, std::size_t channel, std::size_t layer) const {
  return stream_names()[stream] + "/" + std::to_string(channel + 1) + "/" + std::to_string(layer + 1);
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  validate(cfg_);
  Rng rng(seed);
  const std::size_t c = cfg_.channels;
  embed_w_ = &store_.add("embed/w", init_fan_in({cfg_.raw_channels, c}, cfg_.raw_channels, rng));
  embed_b_ = &store_.add("embed/b", Tensor({c}, 0.0));
  layers_.resize(stream_names().size());
  for (std::size_t s = 0; s < layers_.size(); ++s) {
    layers_[s].resize(cfg_.parallel_channels);
    for (std::size_t ch = 0; ch < cfg_.parallel_channels; ++ch)
      for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string pre = pipeline_prefix(s, ch, l);
        LayerParams lp;
        lp.tcn_pre = make_tcn(store_, pre + "/tcn_pre", cfg_.tcn, c, c, rng);
        lp.block = make_block_params(store_, pre + "/block", cfg_, rng);
        lp.tcn_post = make_tcn(store_, pre + "/tcn_post", cfg_.tcn, c, c, rng);
        layers_[s][ch].push_back(std::move(lp));
      }
  }
  const std::size_t fused = cfg_.fused_width();
  if (cfg_.ablation.attention) fusion_ = make_attention_params(store_, "fusion", fused, cfg_.heads, rng);
  const std::size_t flat = cfg_.history * fused;
  head_w_ = &store_.add("head/w", init_fan_in({flat, cfg_.horizon}, flat, rng));
  head_b_ = &store_.add("head/b", Tensor({cfg_.horizon}, 0.0));
  apply_precision();
}

void Model::apply_precision() {
  if (cfg_.precision != Precision::float32) return;
  for (Parameter* p : store_.all())
    for (auto& v : p->value.data()) v = static_cast<double>(static_cast<float>(v));
}

Var gramode_layer_forward(Tape& tape, const Var& x, const Tensor& a_hat, const LayerParams& p,
                          const ModelConfig& cfg, BlockOutput* messages) {
  Var h = tcn_forward(tape, x, p.tcn_pre);
  BlockOutput b = block_forward(h, a_hat, bind(tape, p.block), cfg);
  Var out = tcn_forward(tape, b.out, p.tcn_post);
  if (messages != nullptr) *messages = b;
  return out;
}

Var Model::forward(Tape& tape, const Var& x, const TrafficGraph& graph, ModuleTrace* trace) const {
  if (x.rank() != 4) throw DimensionError("model: input must be B x N x L x C_raw, got " + shape_str(x.shape()));
  const Shape& s = x.shape();
  if (s[1] != cfg_.n_nodes || s[2] != cfg_.history || s[3] != cfg_.raw_channels) {
    throw DimensionError("model: input " + shape_str(x.shape()) + " does not match the configured N, L, C_raw");
  }
  if (graph.n_nodes != cfg_.n_nodes) {
    throw ConfigError("model: graph has " + std::to_string(graph.n_nodes) + " nodes, config expects " +
                      std::to_string(cfg_.n_nodes));
  }
  auto param = [&](Parameter* p) { return tape.param(*p); };
  Var h0 = affine(x, param(embed_w_), param(embed_b_), 3);

  const Tensor* graphs[2] = {&graph.a_hat_connection, &graph.a_hat_dtw};
  std::vector<Var> streams;
  for (std::size_t st = 0; st < layers_.size(); ++st) {
    std::vector<Var> channels;
    for (std::size_t ch = 0; ch < layers_[st].size(); ++ch) {
      Var h = h0;
      for (std::size_t l = 0; l < layers_[st][ch].size(); ++l) {
        BlockOutput msg;
        h = gramode_layer_forward(tape, h, *graphs[st], layers_[st][ch][l], cfg_, trace ? &msg : nullptr);
        if (trace != nullptr) {
          trace->names.push_back(pipeline_prefix(st, ch, l));
          trace->gm.push_back(msg.gm.value());
          trace->lm.push_back(cfg_.ablation.local ? msg.lm.value() : Tensor());
          trace->em.push_back(cfg_.ablation.edge ? msg.em.value() : Tensor());
        }
      }
      channels.push_back(h);
    }
    streams.push_back(concat(channels, 3));
  }
  AttentionVars att;
  if (cfg_.ablation.attention) att = bind(tape, fusion_);
  return fuse_streams(streams[0], streams[1], cfg_.ablation.attention ? &att : nullptr, param(head_w_),
                      param(head_b_));
}

namespace {

std::vector<double> channel_mean_series(const Tensor& t, std::size_t window, std::size_t node) {
  if (t.size() == 0) return {};
  const Shape& s = t.shape();
  if (window >= s[0]) throw InputError("window " + std::to_string(window) + " out of range");
  std::vector<double> out(s[2], 0.0);
  for (std::size_t l = 0; l < s[2]; ++l) {
    for (std::size_t c = 0; c < s[3]; ++c) out[l] += t.at({window, node, l, c});
    out[l] /= static_cast<double>(s[3]);
  }
  return out;
}

}  // namespace

std::vector<ModuleSeries> module_series(const ModuleTrace& trace, std::size_t window, std::size_t node) {
  std::vector<ModuleSeries> out;
  for (std::size_t k = 0; k < trace.names.size(); ++k) {
    const std::size_t n_nodes = trace.gm[k].dim(1);
    if (node >= n_nodes) {
      throw InputError("node " + std::to_string(node) + " out of range for " + std::to_string(n_nodes) + " nodes");
    }
    out.push_back({trace.names[k], channel_mean_series(trace.gm[k], window, node),
                   channel_mean_series(trace.lm[k], window, node), channel_mean_series(trace.em[k], window, node)});
  }
  return out;
}

void write_module_csv(const std::string& path, const std::vector<ModuleSeries>& series) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  out << "pipeline,time,gm,lm,em\n";
  out.precision(17);
  for (const auto& s : series)
    for (std::size_t l = 0; l < s.gm.size(); ++l) {
      out << s.name << ',' << l << ',' << s.gm[l] << ',';
      if (!s.lm.empty()) out << s.lm[l];
      out << ',';
      if (!s.em.empty()) out << s.em[l];
      out << '\n';
    }
  if (!out) throw InputError("write to '" + path + "' failed");
}

}  // namespace gramode
