#pragma once

// The coupled multi ODE-GNN block: global, local and edge message passing
// fields, fixed-step integration, message filtering, gated aggregation and
// the residual update.

#include <functional>
#include <string>
#include <vector>

#include "gramode/attention.hpp"
#include "gramode/autodiff.hpp"
#include "gramode/config.hpp"
#include "gramode/init.hpp"

namespace gramode {

// Parameters of one block. Pointers for disabled modules stay null.
struct BlockParams {
  Parameter* w_s1 = nullptr;  // L x L, shared by the global and edge fields
  Parameter* w_s2 = nullptr;
  Parameter* w_e1 = nullptr;  // edge-only temporal weights when sharing is off
  Parameter* w_e2 = nullptr;
  Parameter* w_l1 = nullptr;  // 1 x 1
  Parameter* w_l2 = nullptr;
  Parameter* m_shared = nullptr;  // N x N
  Parameter* w_channel = nullptr;  // C x C
  Parameter* e_filter = nullptr;   // scalar
  AttentionParams att_time;        // single head over time, features C
  Parameter* w_time = nullptr;     // L x L''
  Parameter* b_time = nullptr;     // L''
  Parameter* lift_scale = nullptr;  // C
  Parameter* lift_bias = nullptr;   // C
  Parameter* w_r = nullptr;         // C x C
  Parameter* b_r = nullptr;         // C
};

struct BlockVars {
  Var w_s1, w_s2, w_e1, w_e2, w_l1, w_l2, m_shared, w_channel, e_filter;
  AttentionVars att_time;
  Var w_time, b_time, lift_scale, lift_bias, w_r, b_r;
};

BlockParams make_block_params(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
BlockVars bind(Tape& tape, const BlockParams& p);

Var effective_adjacency(const Var& a_hat, const Var& m);

// Flattens every non-batch, non-time axis of state into m columns and
// returns W1^T (Z Z^T) W2 per batch element, shape (B, L, L).
Var temporal_operator(const Var& state, std::size_t time_axis, const Var& w1, const Var& w2);

// h x2 (A - I) + time-contraction of (S(T) - I) with h + h x4 (W - I).
// Also serves as the local field with L = 1.
Var f_global(const Var& h, const Var& a_eff, const Var& t_g, const Var& w_channel);
// he x2 (A - I) + he (S(T) - I), the product contracting L.
Var f_edge(const Var& he, const Var& a_eff, const Var& t_e);

using Field = std::function<Var(const Var&)>;

// Fixed-step explicit integration of dy/dt = field(y) over [0, t_end] with
// ceil(t_end * steps_per_unit) steps. Throws DivergenceError on a
// non-finite state.
Var integrate(const Field& field, const Var& y0, double t_end, const IntegratorSpec& spec);
// States at each of the ascending times, each segment continuing from the
// previous snapshot. A time equal to the previous one returns that state.
std::vector<Var> integrate_snapshots(const Field& field, const Var& y0, const std::vector<double>& times,
                                     const IntegratorSpec& spec);

// (B, N, L, C) -> (B, N, L'', C): attention over time per node, then a dense
// map of the time axis.
Var local_temporal_embedding(const Var& h, const AttentionVars& att, const Var& w_time, const Var& b_time);
// (B, N, L, C) -> (B, N, L, C): slice i of the embedding seeds a local ODE
// sampled at t_j = j + offset; output time index i * (L / L'') + j.
Var local_message(const Var& h, const BlockVars& v, const Var& a_eff, const ModelConfig& cfg);

// (B, N, L, C) -> (B, N, N, L) with out[b, i, j, l] = mean_c h[b, j, l, c].
Var init_edge_features(const Var& h);
// (B, N, N, L) -> (B, N, L, C): mean over the copied axis i, then a
// per-channel scale and bias.
Var edge_to_node(const Var& em, const Var& scale, const Var& bias);

Var message_filter(const Var& lm, const Var& gm, const Var& e_filter);

// (1 / 2K) sum_m sum_{n != m} p_m * softmax_C(p_n). Per element the K(K-1)
// products are summed in sorted order, which makes the result exactly
// invariant to the order of parts. K = 1 returns the single part.
Var aggregate(const std::vector<Var>& parts);
// Equal-weight mean of the parts.
Var weighted_sum(const std::vector<Var>& parts);

Var update_residual(const Var& h_in, const Var& h_agg, const Var& w_r, const Var& b_r, double alpha_res,
                    double beta_res);

struct BlockOutput {
  Var out;
  Var gm;
  Var lm;  // after filtering; unset when the local module is off
  Var em;  // node space; unset when the edge module is off
};

BlockOutput block_forward(const Var& h, const Tensor& a_hat, const BlockVars& v, const ModelConfig& cfg);

}  // namespace gramode
