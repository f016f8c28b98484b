#pragma once

// Finite-difference checks over every differentiable op, grouped by the loss
// that exercises them. Shared by the unit and acceptance suites.

#include <string>
#include <vector>

#include "gramode/attention.hpp"
#include "gramode/block.hpp"
#include "gramode/ops.hpp"
#include "gramode/tcn.hpp"
#include "gramode/trainer.hpp"
#include "support/gradcheck.hpp"

namespace gramode::testing {

struct OpCheck {
  std::string name;
  std::size_t paths = 0;
  double worst = 0.0;
};

// Nudges x so that no element lies within 1e-3 of centre +/- half_width.
inline void keep_off_edges(Tensor& x, const Tensor& centre, double half_width) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double c = centre[i % centre.size()];
    for (double edge : {c - half_width, c + half_width})
      if (std::abs(x[i] - edge) < 1e-3) x[i] += 5e-3;
  }
}

inline std::vector<OpCheck> op_gradient_suite(std::uint64_t seed = 9, int trials = 3) {
  std::vector<OpCheck> out;
  auto record = [&](const std::string& name, ParamStore& store, const LossFn& loss) {
    auto entries = gradcheck(store, loss);
    out.push_back({name, entries.size(), worst(entries)});
  };
  std::mt19937_64 rng(seed);
  for (int trial = 0; trial < trials; ++trial) {
    const std::string tag = "/" + std::to_string(trial);
    ParamStore store;
    Parameter& a = store.add("a", random_tensor({2, 3, 4}, rng));
    Parameter& b = store.add("b", random_tensor({3, 4}, rng));
    Parameter& m = store.add("m", random_tensor({3, 2}, rng));
    Parameter& k = store.add("k", random_tensor({3, 4, 2}, rng));
    Parameter& bias = store.add("bias", random_tensor({2}, rng));
    Parameter& e = store.add("e", Tensor::scalar(0.4 + 0.1 * trial));
    const Tensor weights = random_tensor({2, 3, 4}, rng);
    const std::uint64_t wseed = rng();
    // A random linear functional keeps every output element's gradient distinct.
    auto weighted = [&](Tape& t, const Var& v) {
      std::mt19937_64 wrng(wseed);
      return sum_all(mul(v, t.constant(random_tensor(v.shape(), wrng))));
    };

    record("add, sub, mul, scale, add_scalar, sigmoid, abs" + tag, store, [&](Tape& t) {
      Var va = t.param(a), vb = t.param(b);
      Var y = mul(sigmoid(add(va, vb)), sub(va, scale(vb, 0.7)));
      return sum_all(mul(add_scalar(abs(y), 0.1), t.constant(weights)));
    });
    record("softmax, transpose, reshape, mean" + tag, store, [&](Tape& t) {
      Var va = t.param(a);
      Var s = softmax(scale(va, 2.0), 2);
      Var r = reshape(transpose(s, {2, 0, 1}), {8, 3});
      Var mm = mean(r, 1);
      return add(sum_all(mul(mm, t.constant(Tensor({8}, {1, -2, 3, 0.5, 2, -1, 0.3, 4})))),
                 sum_all(mul(s, t.constant(weights))));
    });
    record("nmode_mul, matmul_last2, swap_last2, affine" + tag, store, [&](Tape& t) {
      Var va = t.param(a), vm = t.param(m), vb = t.param(b), vbias = t.param(bias);
      Var y = nmode_mul(va, vm, 2);
      Var z = matmul_last2(y, swap_last2(vb));
      Var aff = affine(va, vm, vbias, 1);
      return add(weighted(t, z), sum_all(mul(aff, sigmoid(y))));
    });
    record("conv1d_dilated_causal" + tag, store, [&](Tape& t) {
      Var y = conv1d_dilated_causal(t.param(a), t.param(k), 2);
      return sum_all(mul(sigmoid(y), y));
    });
    record("concat, slice, broadcast_repeat, mean_all" + tag, store, [&](Tape& t) {
      Var va = t.param(a), vb = t.param(b);
      Var c = concat({va, broadcast_repeat(vb, 0, 1)}, 0);
      Var s = slice(c, 0, 1, 3);
      Var r = broadcast_repeat(mean(s, 2), 1, 2);
      return add(weighted(t, s), mean_all(mul(r, r)));
    });
    keep_off_edges(a.value, b.value, std::abs(e.value[0]));
    record("clamp_between" + tag, store, [&](Tape& t) {
      Var va = t.param(a), vb = t.param(b), ve = abs(t.param(e));
      return sum_all(mul(clamp_between(va, sub(vb, ve), add(vb, ve)), t.constant(weights)));
    });
    record("message_filter" + tag, store, [&](Tape& t) {
      return weighted(t, message_filter(t.param(a), broadcast_repeat(t.param(b), 0, 2), t.param(e)));
    });
    keep_off_edges(a.value, Tensor::scalar(0.0), 0.0);
    record("relu" + tag, store, [&](Tape& t) { return weighted(t, relu(t.param(a))); });
  }

  {
    ParamStore store;
    store.add("p", random_tensor({3, 4}, rng, -3, 3));
    const Tensor y = random_tensor({3, 4}, rng, -3, 3);
    keep_off_edges(store.at("p").value, y, 1.0);
    record("huber_loss", store, [&](Tape& t) { return huber_loss(t.param(store.at("p")), y, 1.0); });
  }
  {
    ParamStore store;
    Rng prng(seed);
    AttentionParams p = make_attention_params(store, "att", 4, 2, prng);
    Parameter& hw = store.add("head_w", random_tensor({12, 2}, rng));
    Parameter& hb = store.add("head_b", random_tensor({2}, rng));
    const Tensor x = random_tensor({2, 3, 4}, rng);
    const Tensor w = random_tensor({2, 2}, rng);
    record("mhsa, dense_head", store, [&](Tape& t) {
      return sum_all(dense_head(mhsa(t.constant(x), bind(t, p)), t.param(hw), t.param(hb)) * t.constant(w));
    });
  }
  {
    ParamStore store;
    for (const char* name : {"p0", "p1", "p2"}) store.add(name, random_tensor({2, 2, 3}, rng));
    const Tensor w = random_tensor({2, 2, 3}, rng);
    record("aggregate, weighted_sum", store, [&](Tape& t) {
      std::vector<Var> parts{t.param(store.at("p0")), t.param(store.at("p1")), t.param(store.at("p2"))};
      return add(sum_all(mul(aggregate(parts), t.constant(w))), sum_all(mul(weighted_sum(parts), weighted_sum(parts))));
    });
  }
  {
    ParamStore store;
    Parameter& h = store.add("h", random_tensor({2, 3, 4, 2}, rng));
    Parameter& sc = store.add("scale", random_tensor({2}, rng));
    Parameter& bi = store.add("bias", random_tensor({2}, rng));
    const Tensor w = random_tensor({2, 3, 4, 2}, rng);
    record("init_edge_features, edge_to_node", store, [&](Tape& t) {
      Var em = init_edge_features(t.param(h));
      return sum_all(mul(sigmoid(edge_to_node(mul(em, em), t.param(sc), t.param(bi))), t.constant(w)));
    });
  }
  return out;
}

}  // namespace gramode::testing
