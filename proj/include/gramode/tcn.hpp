#pragma once

// Dilated causal convolution stack: H^l = act(conv(H^{l-1}, W^l, 2^{l-1})).

#include <string>
#include <vector>

#include "gramode/autodiff.hpp"
#include "gramode/config.hpp"
#include "gramode/init.hpp"

namespace gramode {

struct TcnStack {
  std::vector<Parameter*> kernels;  // layer l: k x C^{l-1} x C^l
  std::size_t kernel_size = 3;
  Activation activation = Activation::sigmoid;
};

// Registers prefix/w1 .. prefix/w<depth>, all c_in -> c_out after the first.
TcnStack make_tcn(ParamStore& store, const std::string& prefix, const TcnConfig& cfg, std::size_t c_in,
                  std::size_t c_out, Rng& rng);

// x: (B, N, L, C_in) -> (B, N, L, C_out). kernels[l] has dilation 2^l.
Var tcn_forward(const Var& x, const std::vector<Var>& kernels, Activation activation);
Var tcn_forward(Tape& tape, const Var& x, const TcnStack& stack);

}  // namespace gramode
