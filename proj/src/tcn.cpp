#include "gramode/tcn.hpp"

#include "gramode/errors.hpp"
#include "gramode/ops.hpp"

namespace gramode {

TcnStack make_tcn(ParamStore& store, const std::string& prefix, const TcnConfig& cfg, std::size_t c_in,
                  std::size_t c_out, Rng& rng) {
  TcnStack s;
  s.kernel_size = cfg.kernel_size;
  s.activation = cfg.activation;
  std::size_t in = c_in;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::string path = prefix + "/w" + std::to_string(l + 1);
    s.kernels.push_back(&store.add(path, init_fan_in({cfg.kernel_size, in, c_out}, cfg.kernel_size * in, rng)));
    in = c_out;
  }
  return s;
}

Var tcn_forward(const Var& x, const std::vector<Var>& kernels, Activation activation) {
  if (kernels.empty()) throw DimensionError("tcn: empty stack");
  Var h = x;
  std::size_t dilation = 1;
  for (const Var& w : kernels) {
    Var c = conv1d_dilated_causal(h, w, dilation);
    h = activation == Activation::sigmoid ? sigmoid(c) : relu(c);
    dilation *= 2;
  }
  return h;
}

Var tcn_forward(Tape& tape, const Var& x, const TcnStack& stack) {
  std::vector<Var> ks;
  ks.reserve(stack.kernels.size());
  for (Parameter* p : stack.kernels) ks.push_back(tape.param(*p));
  return tcn_forward(x, ks, stack.activation);
}

}  // namespace gramode
