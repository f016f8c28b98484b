#pragma once

// Differentiable tensor ops. All operands of one call must live on the same
// tape. Binary elementwise ops broadcast by trailing-axis alignment with
// size-1 expansion. Axis arguments are 0-based except nmode_mul, whose mode
// index is 1-based to match the usual n-mode product notation.

#include <cstddef>
#include <vector>

#include "gramode/autodiff.hpp"

namespace gramode {

Shape broadcast_shapes(const Shape& a, const Shape& b);

// -- pointwise --------------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);
Var sigmoid(const Var& x);
Var relu(const Var& x);
Var abs(const Var& x);
// min(max(x, lo), hi). Gradient goes to x strictly inside the band (or at a
// boundary it has not crossed), otherwise to the active bound.
Var clamp_between(const Var& x, const Var& lo, const Var& hi);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }

// -- reductions / normalisation ---------------------------------------------
Var softmax(const Var& x, std::size_t axis);
Var mean(const Var& x, std::size_t axis);  // removes axis
Var sum_all(const Var& x);                 // scalar
Var mean_all(const Var& x);                // scalar

// -- contractions -----------------------------------------------------------
// Replaces the extent of mode n (1-based) by m.shape[1]:
//   out[.., l, ..] = sum_j t[.., j, ..] * m[j, l]
Var nmode_mul(const Var& t, const Var& m, std::size_t mode);
// Matrix product over the trailing two axes; leading axes broadcast.
Var matmul_last2(const Var& a, const Var& b);
// Contraction on axis (0-based) followed by a bias along that axis.
Var affine(const Var& x, const Var& w, const Var& b, std::size_t axis);
// x: (..., L, C_in), kernel: k x C_in x C_out. Output (..., L, C_out) where
// step l reads steps l, l-d, ..., l-(k-1)d; kernel[k-1] taps the current step.
Var conv1d_dilated_causal(const Var& x, const Var& kernel, std::size_t dilation);

// -- structural -------------------------------------------------------------
Var transpose(const Var& x, const std::vector<std::size_t>& perm);
Var swap_last2(const Var& x);
Var reshape(const Var& x, Shape shape);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end);
// Inserts a new axis at position axis holding k copies of x.
Var broadcast_repeat(const Var& x, std::size_t axis, std::size_t k);

}  // namespace gramode
