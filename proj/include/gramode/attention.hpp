#pragma once

// Multi-head scaled dot-product self-attention over the second-to-last axis
// (tokens) with features on the last axis.

#include <string>

#include "gramode/autodiff.hpp"
#include "gramode/init.hpp"

namespace gramode {

struct AttentionParams {
  Parameter* w_q = nullptr;
  Parameter* w_k = nullptr;
  Parameter* w_v = nullptr;
  Parameter* b_q = nullptr;
  Parameter* b_k = nullptr;
  Parameter* b_v = nullptr;
  std::size_t heads = 1;
};

struct AttentionVars {
  Var w_q, w_k, w_v, b_q, b_k, b_v;
  std::size_t heads = 1;
};

// Registers prefix/{w_q,w_k,w_v,b_q,b_k,b_v}; throws ConfigError unless
// features is divisible by heads.
AttentionParams make_attention_params(ParamStore& store, const std::string& prefix, std::size_t features,
                                      std::size_t heads, Rng& rng);
AttentionVars bind(Tape& tape, const AttentionParams& p);

// x: (..., T, F). Per head: softmax(sqrt(h/F) * Q_i K_i^T) V_i over tokens.
Var mhsa(const Var& x, const AttentionVars& p);

// Flattens (..., L, F) into (..., L*F) and applies the dense forecast head.
Var dense_head(const Var& x, const Var& w, const Var& b);

// Concatenates the two streams on the feature axis, attends over time
// (skipped when attention is null) and projects to the horizon:
// (B, N, L, F_a) x (B, N, L, F_b) -> (B, N, L').
Var fuse_streams(const Var& a, const Var& b, const AttentionVars* attention, const Var& head_w,
                 const Var& head_b);

}  // namespace gramode
