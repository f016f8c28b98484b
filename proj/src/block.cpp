#include "gramode/block.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "gramode/errors.hpp"
#include "gramode/ops.hpp"

namespace gramode {
namespace {

Var minus_identity(const Var& m, std::size_t n) { return sub(m, m.tape().constant(Tensor::identity(n))); }

void require_rank(const Var& v, std::size_t r, const char* what) {
  if (v.rank() != r) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(v.shape()));
  }
}

}  // namespace

BlockParams make_block_params(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
  const std::size_t l = cfg.history, c = cfg.channels, n = cfg.n_nodes;
  const double tstd = cfg.block.temporal_init_std;
  const Ablation& ab = cfg.ablation;
  BlockParams p;
  auto add = [&](const std::string& name, Tensor t) { return &store.add(prefix + "/" + name, std::move(t)); };
  p.w_s1 = add("w_s1", init_normal({l, l}, tstd, rng));
  p.w_s2 = add("w_s2", init_normal({l, l}, tstd, rng));
  p.w_channel = add("w_channel", init_fan_in({c, c}, c, rng));
  if (ab.share) p.m_shared = add("m_shared", init_normal({n, n}, 0.01, rng));
  if (ab.edge) {
    if (!ab.share) {
      p.w_e1 = add("w_e1", init_normal({l, l}, tstd, rng));
      p.w_e2 = add("w_e2", init_normal({l, l}, tstd, rng));
    }
    p.lift_scale = add("edge_lift/scale", Tensor({c}, 1.0));
    p.lift_bias = add("edge_lift/bias", Tensor({c}, 0.0));
  }
  if (ab.local) {
    p.w_l1 = add("w_l1", init_normal({1, 1}, tstd, rng));
    p.w_l2 = add("w_l2", init_normal({1, 1}, tstd, rng));
    p.att_time = make_attention_params(store, prefix + "/att_time", c, 1, rng);
    p.w_time = add("att_time/w_time", init_fan_in({l, cfg.latent_len}, l, rng));
    p.b_time = add("att_time/b_time", Tensor({cfg.latent_len}, 0.0));
    if (ab.filter) p.e_filter = add("e_filter", init_normal({}, 1.0, rng));
  }
  if (ab.res) {
    p.w_r = add("w_r", init_fan_in({c, c}, c, rng));
    p.b_r = add("b_r", Tensor({c}, 0.0));
  }
  return p;
}

BlockVars bind(Tape& tape, const BlockParams& p) {
  auto get = [&](Parameter* q) { return q != nullptr ? tape.param(*q) : Var(); };
  BlockVars v;
  v.w_s1 = get(p.w_s1);
  v.w_s2 = get(p.w_s2);
  v.w_e1 = get(p.w_e1);
  v.w_e2 = get(p.w_e2);
  v.w_l1 = get(p.w_l1);
  v.w_l2 = get(p.w_l2);
  v.m_shared = get(p.m_shared);
  v.w_channel = get(p.w_channel);
  v.e_filter = get(p.e_filter);
  if (p.att_time.w_q != nullptr) v.att_time = bind(tape, p.att_time);
  v.w_time = get(p.w_time);
  v.b_time = get(p.b_time);
  v.lift_scale = get(p.lift_scale);
  v.lift_bias = get(p.lift_bias);
  v.w_r = get(p.w_r);
  v.b_r = get(p.b_r);
  return v;
}

Var effective_adjacency(const Var& a_hat, const Var& m) {
  if (a_hat.shape() != m.shape()) {
    throw DimensionError("effective_adjacency: " + shape_str(a_hat.shape()) + " vs " + shape_str(m.shape()));
  }
  return add(a_hat, m);
}

Var temporal_operator(const Var& state, std::size_t time_axis, const Var& w1, const Var& w2) {
  require_rank(state, 4, "temporal_operator");
  if (time_axis == 0 || time_axis > 3) throw DimensionError("temporal_operator: time axis must be 1, 2 or 3");
  const Shape& s = state.shape();
  const std::size_t b = s[0], l = s[time_axis];
  if (w1.shape() != Shape{l, l} || w2.shape() != Shape{l, l}) {
    throw DimensionError("temporal_operator: weights must be " + std::to_string(l) + "x" + std::to_string(l));
  }
  std::vector<std::size_t> perm{0, time_axis};
  for (std::size_t a = 1; a < 4; ++a)
    if (a != time_axis) perm.push_back(a);
  Var z = reshape(transpose(state, perm), {b, l, state.value().size() / (b * l)});
  Var gram = matmul_last2(z, swap_last2(z));  // (B, L, L)
  return matmul_last2(matmul_last2(swap_last2(w1), gram), w2);
}

Var f_global(const Var& h, const Var& a_eff, const Var& t_g, const Var& w_channel) {
  require_rank(h, 4, "f_global");
  const Shape& s = h.shape();
  const std::size_t b = s[0], n = s[1], l = s[2], c = s[3];
  if (t_g.shape() != Shape{b, l, l}) throw DimensionError("f_global: temporal operator shape mismatch");
  Var spatial = nmode_mul(h, minus_identity(a_eff, n), 2);
  Var p = reshape(minus_identity(sigmoid(t_g), l), {b, 1, l, l});
  Var temporal = matmul_last2(p, h);
  Var channel = nmode_mul(h, minus_identity(w_channel, c), 4);
  return add(add(spatial, temporal), channel);
}

Var f_edge(const Var& he, const Var& a_eff, const Var& t_e) {
  require_rank(he, 4, "f_edge");
  const Shape& s = he.shape();
  const std::size_t b = s[0], n = s[1], l = s[3];
  if (s[2] != n) throw DimensionError("f_edge: state must be B x N x N x L");
  if (t_e.shape() != Shape{b, l, l}) throw DimensionError("f_edge: temporal operator shape mismatch");
  Var spatial = nmode_mul(he, minus_identity(a_eff, n), 2);
  Var p = reshape(minus_identity(sigmoid(t_e), l), {b, 1, l, l});
  return add(spatial, matmul_last2(he, p));
}

namespace {

Var step(const Field& f, const Var& y, double dt, Integrator method) {
  if (method == Integrator::euler) return add(y, scale(f(y), dt));
  Var k1 = f(y);
  Var k2 = f(add(y, scale(k1, dt / 2)));
  Var k3 = f(add(y, scale(k2, dt / 2)));
  Var k4 = f(add(y, scale(k3, dt)));
  Var sum = add(add(k1, scale(k2, 2.0)), add(scale(k3, 2.0), k4));
  return add(y, scale(sum, dt / 6));
}

Var integrate_span(const Field& field, Var y, double span, const IntegratorSpec& spec) {
  if (span < 0) throw DomainError("integrate: time span must be nonnegative");
  if (span == 0) return y;
  const auto n = static_cast<std::size_t>(std::ceil(span * static_cast<double>(spec.steps_per_unit)));
  const double dt = span / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    y = step(field, y, dt, spec.method);
    if (!y.value().all_finite()) {
      throw DivergenceError("integration diverged at step " + std::to_string(k + 1) + " of " + std::to_string(n));
    }
  }
  return y;
}

}  // namespace

Var integrate(const Field& field, const Var& y0, double t_end, const IntegratorSpec& spec) {
  if (t_end < 0) throw DomainError("integrate: t_end must be nonnegative");
  return integrate_span(field, y0, t_end, spec);
}

std::vector<Var> integrate_snapshots(const Field& field, const Var& y0, const std::vector<double>& times,
                                     const IntegratorSpec& spec) {
  std::vector<Var> out;
  out.reserve(times.size());
  Var y = y0;
  double now = 0.0;
  for (double t : times) {
    if (t < now) throw DomainError("integrate_snapshots: times must be ascending and nonnegative");
    y = integrate_span(field, y, t - now, spec);
    now = t;
    out.push_back(y);
  }
  return out;
}

Var local_temporal_embedding(const Var& h, const AttentionVars& att, const Var& w_time, const Var& b_time) {
  require_rank(h, 4, "local_temporal_embedding");
  Var attended = mhsa(h, att);
  return affine(attended, w_time, b_time, 2);
}

Var local_message(const Var& h, const BlockVars& v, const Var& a_eff, const ModelConfig& cfg) {
  require_rank(h, 4, "local_message");
  const Shape& s = h.shape();
  const std::size_t b = s[0], n = s[1], l = s[2], c = s[3], lat = cfg.latent_len;
  if (lat == 0 || l % lat != 0) throw DimensionError("local_message: L must be divisible by L''");
  const std::size_t per = l / lat;
  Var emb = local_temporal_embedding(h, v.att_time, v.w_time, v.b_time);  // (B, N, L'', C)
  // Every slice is an independent initial value: batch them as (B L'', N, 1, C).
  Var y0 = reshape(transpose(emb, {0, 2, 1, 3}), {b * lat, n, 1, c});
  Field field = [&](const Var& y) {
    return f_global(y, a_eff, temporal_operator(y, 2, v.w_l1, v.w_l2), v.w_channel);
  };
  std::vector<double> times(per);
  for (std::size_t j = 0; j < per; ++j) times[j] = static_cast<double>(j) + cfg.integrator.local_time_offset;
  std::vector<Var> snaps = integrate_snapshots(field, y0, times, cfg.integrator);
  std::vector<Var> parts;
  parts.reserve(per);
  for (const Var& sn : snaps) parts.push_back(reshape(sn, {b, lat, 1, n, c}));
  Var stacked = reshape(concat(parts, 2), {b, l, n, c});  // time index i * per + j
  return transpose(stacked, {0, 2, 1, 3});
}

Var init_edge_features(const Var& h) {
  require_rank(h, 4, "init_edge_features");
  return broadcast_repeat(mean(h, 3), 1, h.dim(1));
}

Var edge_to_node(const Var& em, const Var& scale_c, const Var& bias_c) {
  require_rank(em, 4, "edge_to_node");
  const Shape& s = em.shape();
  Var m = reshape(mean(em, 1), {s[0], s[2], s[3], 1});
  return add(mul(m, scale_c), bias_c);
}

Var message_filter(const Var& lm, const Var& gm, const Var& e_filter) {
  if (lm.shape() != gm.shape()) throw DimensionError("message_filter: LM and GM shapes differ");
  Var band = abs(e_filter);
  return clamp_between(lm, sub(gm, band), add(gm, band));
}

Var aggregate(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("aggregate: no inputs");
  if (parts.size() == 1) return parts[0];
  const Shape& shape = parts[0].shape();
  for (const Var& p : parts)
    if (p.shape() != shape) throw DimensionError("aggregate: input shapes differ");
  if (shape.empty()) throw DimensionError("aggregate: inputs need a channel axis");
  const std::size_t k = parts.size();
  const std::size_t c = shape.back();
  const std::size_t rows = parts[0].value().size() / c;
  const double coef = 1.0 / (2.0 * static_cast<double>(k));

  // Channel softmax of every part.
  auto soft = std::make_shared<std::vector<Tensor>>();
  for (const Var& p : parts) {
    Tensor s(shape);
    const auto x = p.value().data();
    auto o = s.data();
    for (std::size_t r = 0; r < rows; ++r) {
      double mx = x[r * c];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[r * c + j]);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) z += (o[r * c + j] = std::exp(x[r * c + j] - mx));
      for (std::size_t j = 0; j < c; ++j) o[r * c + j] /= z;
    }
    soft->push_back(std::move(s));
  }

  Tensor out(shape);
  std::vector<double> terms(k * (k - 1));
  for (std::size_t e = 0; e < out.size(); ++e) {
    std::size_t t = 0;
    for (std::size_t m = 0; m < k; ++m)
      for (std::size_t n = 0; n < k; ++n)
        if (n != m) terms[t++] = parts[m].value()[e] * (*soft)[n][e];
    std::sort(terms.begin(), terms.end());
    double acc = 0.0;
    for (double v : terms) acc += v;
    out[e] = coef * acc;
  }

  return parts[0].tape().record(std::move(out), parts, [soft, k, c, rows, coef](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    const std::size_t size = g.size();
    // Sum of all parts, to form sum_{m != n} p_m cheaply.
    std::vector<double> total(size, 0.0), stotal(size, 0.0);
    for (std::size_t m = 0; m < k; ++m)
      for (std::size_t e = 0; e < size; ++e) {
        total[e] += ctx.input(m)[e];
        stotal[e] += (*soft)[m][e];
      }
    std::vector<double> q(size);
    for (std::size_t n = 0; n < k; ++n) {
      Tensor* gn = ctx.input_grad(n);
      if (gn == nullptr) continue;
      const Tensor& pn = ctx.input(n);
      const Tensor& sn = (*soft)[n];
      for (std::size_t e = 0; e < size; ++e) {
        // Direct path through p_n, and the gate path through softmax(p_n).
        (*gn)[e] += coef * g[e] * (stotal[e] - sn[e]);
        q[e] = coef * g[e] * (total[e] - pn[e]);
      }
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += q[r * c + j] * sn[r * c + j];
        for (std::size_t j = 0; j < c; ++j) (*gn)[r * c + j] += sn[r * c + j] * (q[r * c + j] - dot);
      }
    }
  });
}

Var weighted_sum(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("weighted_sum: no inputs");
  Var acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
  return scale(acc, 1.0 / static_cast<double>(parts.size()));
}

Var update_residual(const Var& h_in, const Var& h_agg, const Var& w_r, const Var& b_r, double alpha_res,
                    double beta_res) {
  if (h_in.shape() != h_agg.shape()) throw DimensionError("update_residual: input shapes differ");
  Var gate = sigmoid(affine(h_in, w_r, b_r, h_in.rank() - 1));
  return add(scale(gate, alpha_res), scale(h_agg, beta_res));
}

BlockOutput block_forward(const Var& h, const Tensor& a_hat, const BlockVars& v, const ModelConfig& cfg) {
  require_rank(h, 4, "block_forward");
  const Ablation& ab = cfg.ablation;
  Tape& tape = h.tape();
  Var a_const = tape.constant(a_hat);
  Var a_eff = ab.share ? effective_adjacency(a_const, v.m_shared) : a_const;

  BlockOutput out;
  Field global_field = [&](const Var& y) {
    return f_global(y, a_eff, temporal_operator(y, 2, v.w_s1, v.w_s2), v.w_channel);
  };
  out.gm = integrate(global_field, h, cfg.integrator.t_end_global, cfg.integrator);
  std::vector<Var> active{out.gm};

  if (ab.local) {
    Var lm = local_message(h, v, a_eff, cfg);
    out.lm = ab.filter ? message_filter(lm, out.gm, v.e_filter) : lm;
    active.push_back(out.lm);
  }
  if (ab.edge) {
    const Var& w1 = ab.share ? v.w_s1 : v.w_e1;
    const Var& w2 = ab.share ? v.w_s2 : v.w_e2;
    Field edge_field = [&](const Var& y) { return f_edge(y, a_eff, temporal_operator(y, 3, w1, w2)); };
    Var em = integrate(edge_field, init_edge_features(h), cfg.integrator.t_end_global, cfg.integrator);
    out.em = edge_to_node(em, v.lift_scale, v.lift_bias);
    active.push_back(out.em);
  }

  Var agg = active.size() == 1 ? out.gm : (ab.agg ? aggregate(active) : weighted_sum(active));
  out.out = ab.res ? update_residual(h, agg, v.w_r, v.b_r, cfg.block.alpha_res, cfg.block.beta_res) : agg;
  return out;
}

}  // namespace gramode
