#include "gramode/attention.hpp"

#include <cmath>

#include "gramode/errors.hpp"
#include "gramode/ops.hpp"

namespace gramode {

AttentionParams make_attention_params(ParamStore& store, const std::string& prefix, std::size_t features,
                                      std::size_t heads, Rng& rng) {
  if (heads == 0 || features % heads != 0) {
    throw ConfigError("attention: feature width " + std::to_string(features) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  AttentionParams p;
  p.heads = heads;
  p.w_q = &store.add(prefix + "/w_q", init_fan_in({features, features}, features, rng));
  p.w_k = &store.add(prefix + "/w_k", init_fan_in({features, features}, features, rng));
  p.w_v = &store.add(prefix + "/w_v", init_fan_in({features, features}, features, rng));
  p.b_q = &store.add(prefix + "/b_q", Tensor({features}, 0.0));
  p.b_k = &store.add(prefix + "/b_k", Tensor({features}, 0.0));
  p.b_v = &store.add(prefix + "/b_v", Tensor({features}, 0.0));
  return p;
}

AttentionVars bind(Tape& tape, const AttentionParams& p) {
  return {tape.param(*p.w_q), tape.param(*p.w_k), tape.param(*p.w_v), tape.param(*p.b_q),
          tape.param(*p.b_k), tape.param(*p.b_v), p.heads};
}

Var mhsa(const Var& x, const AttentionVars& p) {
  if (x.rank() < 2) throw DimensionError("mhsa: input needs a token and a feature axis");
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  const std::size_t tokens = s[r - 2], features = s[r - 1];
  if (features % p.heads != 0) {
    throw ConfigError("mhsa: feature width " + std::to_string(features) + " is not divisible by " +
                      std::to_string(p.heads) + " heads");
  }
  const std::size_t hd = features / p.heads;
  std::size_t lead = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) lead *= s[i];

  auto split = [&](const Var& t) {
    // (..., T, F) -> (lead, h, T, d)
    return transpose(reshape(t, {lead, tokens, p.heads, hd}), {0, 2, 1, 3});
  };
  Var q = split(affine(x, p.w_q, p.b_q, r - 1));
  Var k = split(affine(x, p.w_k, p.b_k, r - 1));
  Var v = split(affine(x, p.w_v, p.b_v, r - 1));
  const double scale_factor = std::sqrt(static_cast<double>(p.heads) / static_cast<double>(features));
  Var scores = scale(matmul_last2(q, swap_last2(k)), scale_factor);
  Var weights = softmax(scores, 3);
  Var heads_out = matmul_last2(weights, v);  // (lead, h, T, d)
  return reshape(transpose(heads_out, {0, 2, 1, 3}), s);
}

Var dense_head(const Var& x, const Var& w, const Var& b) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw DimensionError("dense_head: input needs time and feature axes");
  Shape flat(s.begin(), s.end() - 2);
  flat.push_back(s[s.size() - 2] * s[s.size() - 1]);
  Var f = reshape(x, flat);
  return affine(f, w, b, flat.size() - 1);
}

Var fuse_streams(const Var& a, const Var& b, const AttentionVars* attention, const Var& head_w,
                 const Var& head_b) {
  if (a.rank() != 4 || b.rank() != 4) throw DimensionError("fuse_streams: streams must be rank 4");
  Var x = concat({a, b}, 3);
  if (attention != nullptr) x = mhsa(x, *attention);
  return dense_head(x, head_w, head_b);
}

}  // namespace gramode
