#include "gramode/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gramode/errors.hpp"
#include "gramode/kernels.hpp"

namespace gramode {
namespace {

constexpr long kElementwiseGrain = 1 << 15;

Tape& common_tape(std::initializer_list<const Var*> vars) {
  Tape* t = &(*vars.begin())->tape();
  for (const Var* v : vars) {
    if (&v->tape() != t) throw GraphError("operands recorded on different tapes");
    (void)v->value();  // validates liveness
  }
  return *t;
}

// Maps a flat index of the broadcast output to a flat index of one operand.
class BroadcastIndex {
 public:
  BroadcastIndex(const Shape& in, const Shape& out) {
    const std::size_t in_size = shape_size(in);
    const std::size_t out_size = shape_size(out);
    if (in == out) {
      kind_ = Kind::kSame;
    } else if (in_size == 1) {
      kind_ = Kind::kScalar;
    } else {
      // Suffix case: after dropping leading ones, in equals a trailing block of out.
      Shape trimmed(std::find_if(in.begin(), in.end(), [](auto e) { return e != 1; }), in.end());
      if (trimmed.size() <= out.size() &&
          std::equal(trimmed.begin(), trimmed.end(), out.end() - static_cast<long>(trimmed.size()))) {
        kind_ = Kind::kSuffix;
        mod_ = in_size;
      } else {
        kind_ = Kind::kGeneral;
        build_general(in, out, out_size);
      }
    }
  }

  std::size_t operator()(std::size_t i) const {
    switch (kind_) {
      case Kind::kSame: return i;
      case Kind::kScalar: return 0;
      case Kind::kSuffix: return i % mod_;
      default: return map_[i];
    }
  }

 private:
  enum class Kind { kSame, kScalar, kSuffix, kGeneral };

  void build_general(const Shape& in, const Shape& out, std::size_t out_size) {
    const std::size_t r = out.size();
    std::vector<std::size_t> stride(r, 0);
    std::size_t s = 1;
    for (std::size_t k = 0; k < in.size(); ++k) {
      const std::size_t axis_in = in.size() - 1 - k;
      const std::size_t axis_out = r - 1 - k;
      stride[axis_out] = in[axis_in] == 1 ? 0 : s;
      s *= in[axis_in];
    }
    map_.resize(out_size);
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < out_size; ++i) {
      map_[i] = off;
      for (std::size_t ax = r; ax-- > 0;) {
        ++idx[ax];
        off += stride[ax];
        if (idx[ax] < out[ax]) break;
        off -= stride[ax] * idx[ax];
        idx[ax] = 0;
      }
    }
  }

  Kind kind_ = Kind::kSame;
  std::size_t mod_ = 1;
  std::vector<std::size_t> map_;
};

// Sum g (of shape out) into acc (of the operand's shape).
void reduce_into(const Tensor& g, const BroadcastIndex& map, Tensor& acc) {
  for (std::size_t i = 0; i < g.size(); ++i) acc[map(i)] += g[i];
}

enum class BinOp { kAdd, kSub, kMul };

Var binary(const Var& a, const Var& b, BinOp op) {
  Tape& tape = common_tape({&a, &b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Shape out_shape = broadcast_shapes(av.shape(), bv.shape());
  Tensor out(out_shape);
  {
    BroadcastIndex ia(av.shape(), out_shape), ib(bv.shape(), out_shape);
    const long n = static_cast<long>(out.size());
    double* o = out.data().data();
    const double* pa = av.data().data();
    const double* pb = bv.data().data();
    switch (op) {
      case BinOp::kAdd:
#pragma omp parallel for if (n > kElementwiseGrain)
        for (long i = 0; i < n; ++i) o[i] = pa[ia(i)] + pb[ib(i)];
        break;
      case BinOp::kSub:
#pragma omp parallel for if (n > kElementwiseGrain)
        for (long i = 0; i < n; ++i) o[i] = pa[ia(i)] - pb[ib(i)];
        break;
      case BinOp::kMul:
#pragma omp parallel for if (n > kElementwiseGrain)
        for (long i = 0; i < n; ++i) o[i] = pa[ia(i)] * pb[ib(i)];
        break;
    }
  }
  return tape.record(std::move(out), {a, b}, [op](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    const Shape& os = g.shape();
    if (Tensor* ga = ctx.input_grad(0)) {
      BroadcastIndex ia(ctx.input(0).shape(), os);
      if (op == BinOp::kMul) {
        BroadcastIndex ib(ctx.input(1).shape(), os);
        const Tensor& bv = ctx.input(1);
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[ia(i)] += g[i] * bv[ib(i)];
      } else {
        reduce_into(g, ia, *ga);
      }
    }
    if (Tensor* gb = ctx.input_grad(1)) {
      BroadcastIndex ib(ctx.input(1).shape(), os);
      if (op == BinOp::kMul) {
        BroadcastIndex ia(ctx.input(0).shape(), os);
        const Tensor& av = ctx.input(0);
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[ib(i)] += g[i] * av[ia(i)];
      } else if (op == BinOp::kSub) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[ib(i)] -= g[i];
      } else {
        reduce_into(g, ib, *gb);
      }
    }
  });
}

// View of x as (pre, n, post) around axis.
struct AxisView {
  std::size_t pre = 1, n = 1, post = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.pre *= s[i];
  v.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.post *= s[i];
  return v;
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) {
    const std::size_t ea = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t eb = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[r - 1 - k] = std::max(ea, eb);
  }
  return out;
}

Var add(const Var& a, const Var& b) { return binary(a, b, BinOp::kAdd); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinOp::kSub); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinOp::kMul); }

Var scale(const Var& x, double c) {
  Tensor out = x.value();
  for (auto& v : out.data()) v *= c;
  return x.tape().record(std::move(out), {x}, [c](BackwardContext& ctx) {
    Tensor* gx = ctx.input_grad(0);
    const Tensor& g = ctx.grad();
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += c * g[i];
  });
}

Var add_scalar(const Var& x, double c) {
  Tensor out = x.value();
  for (auto& v : out.data()) v += c;
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    Tensor* gx = ctx.input_grad(0);
    const Tensor& g = ctx.grad();
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  const long n = static_cast<long>(out.size());
  double* o = out.data().data();
#pragma omp parallel for if (n > kElementwiseGrain)
  for (long i = 0; i < n; ++i) {
    const double v = o[i];
    // Split on sign so exp never overflows.
    if (v >= 0) {
      o[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      o[i] = e / (1.0 + e);
    }
  }
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    Tensor* gx = ctx.input_grad(0);
    const Tensor& g = ctx.grad();
    const Tensor& y = ctx.output();
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0 ? v : 0.0;
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    Tensor* gx = ctx.input_grad(0);
    const Tensor& g = ctx.grad();
    const Tensor& xin = ctx.input(0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xin[i] > 0) (*gx)[i] += g[i];
  });
}

Var abs(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::abs(v);
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    Tensor* gx = ctx.input_grad(0);
    const Tensor& g = ctx.grad();
    const Tensor& xin = ctx.input(0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xin[i] > 0) (*gx)[i] += g[i];
      else if (xin[i] < 0) (*gx)[i] -= g[i];
    }
  });
}

Var clamp_between(const Var& x, const Var& lo, const Var& hi) {
  Tape& tape = common_tape({&x, &lo, &hi});
  const Tensor& xv = x.value();
  const Tensor& lv = lo.value();
  const Tensor& hv = hi.value();
  Shape os = broadcast_shapes(broadcast_shapes(xv.shape(), lv.shape()), hv.shape());
  BroadcastIndex ix(xv.shape(), os), il(lv.shape(), os), ih(hv.shape(), os);
  Tensor out(os);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double l = lv[il(i)], h = hv[ih(i)];
    if (l > h) throw DomainError("clamp_between: lo > hi at element " + std::to_string(i));
    const double v = xv[ix(i)];
    out[i] = v < l ? l : (v > h ? h : v);
  }
  return tape.record(std::move(out), {x, lo, hi}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    const Shape& os = g.shape();
    const Tensor& xv = ctx.input(0);
    const Tensor& lv = ctx.input(1);
    const Tensor& hv = ctx.input(2);
    BroadcastIndex ix(xv.shape(), os), il(lv.shape(), os), ih(hv.shape(), os);
    Tensor* gx = ctx.input_grad(0);
    Tensor* gl = ctx.input_grad(1);
    Tensor* gh = ctx.input_grad(2);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[ix(i)];
      if (v < lv[il(i)]) {
        if (gl) (*gl)[il(i)] += g[i];
      } else if (v > hv[ih(i)]) {
        if (gh) (*gh)[ih(i)] += g[i];
      } else if (gx) {
        (*gx)[ix(i)] += g[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------

Var softmax(const Var& x, std::size_t axis) {
  const Tensor& xv = x.value();
  const AxisView v = axis_view(xv.shape(), axis);
  Tensor out(xv.shape());
  for (std::size_t p = 0; p < v.pre; ++p)
    for (std::size_t q = 0; q < v.post; ++q) {
      const std::size_t base = p * v.n * v.post + q;
      double mx = xv[base];
      for (std::size_t k = 1; k < v.n; ++k) mx = std::max(mx, xv[base + k * v.post]);
      double s = 0.0;
      for (std::size_t k = 0; k < v.n; ++k) {
        const double e = std::exp(xv[base + k * v.post] - mx);
        out[base + k * v.post] = e;
        s += e;
      }
      for (std::size_t k = 0; k < v.n; ++k) out[base + k * v.post] /= s;
    }
  return x.tape().record(std::move(out), {x}, [v](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    const Tensor& y = ctx.output();
    Tensor* gx = ctx.input_grad(0);
    for (std::size_t p = 0; p < v.pre; ++p)
      for (std::size_t q = 0; q < v.post; ++q) {
        const std::size_t base = p * v.n * v.post + q;
        double dot = 0.0;
        for (std::size_t k = 0; k < v.n; ++k) dot += g[base + k * v.post] * y[base + k * v.post];
        for (std::size_t k = 0; k < v.n; ++k) {
          const std::size_t i = base + k * v.post;
          (*gx)[i] += y[i] * (g[i] - dot);
        }
      }
  });
}

Var mean(const Var& x, std::size_t axis) {
  const Tensor& xv = x.value();
  const AxisView v = axis_view(xv.shape(), axis);
  Shape os = xv.shape();
  os.erase(os.begin() + static_cast<long>(axis));
  Tensor out(os, 0.0);
  const double inv = 1.0 / static_cast<double>(v.n);
  for (std::size_t p = 0; p < v.pre; ++p)
    for (std::size_t k = 0; k < v.n; ++k)
      for (std::size_t q = 0; q < v.post; ++q) out[p * v.post + q] += xv[(p * v.n + k) * v.post + q];
  for (auto& e : out.data()) e *= inv;
  return x.tape().record(std::move(out), {x}, [v, inv](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    Tensor* gx = ctx.input_grad(0);
    for (std::size_t p = 0; p < v.pre; ++p)
      for (std::size_t k = 0; k < v.n; ++k)
        for (std::size_t q = 0; q < v.post; ++q) (*gx)[(p * v.n + k) * v.post + q] += g[p * v.post + q] * inv;
  });
}

Var sum_all(const Var& x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double e : xv.data()) s += e;
  return x.tape().record(Tensor::scalar(s), {x}, [](BackwardContext& ctx) {
    const double g = ctx.grad()[0];
    Tensor* gx = ctx.input_grad(0);
    for (auto& e : gx->data()) e += g;
  });
}

Var mean_all(const Var& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.value().size())); }

// ---------------------------------------------------------------------------

Var nmode_mul(const Var& t, const Var& m, std::size_t mode) {
  Tape& tape = common_tape({&t, &m});
  const Tensor& tv = t.value();
  const Tensor& mv = m.value();
  if (mode < 1 || mode > tv.rank()) {
    throw DimensionError("nmode_mul: mode " + std::to_string(mode) + " invalid for rank-" +
                         std::to_string(tv.rank()) + " tensor");
  }
  if (mv.rank() != 2 || mv.dim(0) != tv.dim(mode - 1)) {
    throw DimensionError("nmode_mul: mode " + std::to_string(mode) + " has extent " +
                         std::to_string(tv.dim(mode - 1)) + " but matrix is " + shape_str(mv.shape()));
  }
  const AxisView v = axis_view(tv.shape(), mode - 1);
  const std::size_t lo = mv.dim(1);
  Shape os = tv.shape();
  os[mode - 1] = lo;
  Tensor out(os);
  kernels::mode_product(tv.data(), v.pre, v.n, v.post, mv.data(), lo, out.data());
  return tape.record(std::move(out), {t, m}, [v, lo](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    if (Tensor* gt = ctx.input_grad(0)) {
      kernels::mode_product_grad_input(g.data(), v.pre, v.n, v.post, ctx.input(1).data(), lo, gt->data());
    }
    if (Tensor* gm = ctx.input_grad(1)) {
      kernels::mode_product_grad_matrix(ctx.input(0).data(), g.data(), v.pre, v.n, v.post, lo, gm->data());
    }
  });
}

Var matmul_last2(const Var& a, const Var& b) {
  Tape& tape = common_tape({&a, &b});
  const Shape& as = a.value().shape();
  const Shape& bs = b.value().shape();
  if (as.size() < 2 || bs.size() < 2) throw DimensionError("matmul_last2: operands need rank >= 2");
  const std::size_t p = as[as.size() - 2], q = as.back(), r = bs.back();
  if (bs[bs.size() - 2] != q) {
    throw DimensionError("matmul_last2: inner dimensions differ, " + shape_str(as) + " x " + shape_str(bs));
  }
  const Shape alead(as.begin(), as.end() - 2), blead(bs.begin(), bs.end() - 2);
  const Shape lead = broadcast_shapes(alead, blead);
  const std::size_t nb = shape_size(lead);
  BroadcastIndex ia(alead, lead), ib(blead, lead);
  kernels::GemmBatch fwd;
  fwd.p = p;
  fwd.q = q;
  fwd.r = r;
  fwd.a_off.resize(nb);
  fwd.b_off.resize(nb);
  fwd.c_off.resize(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    fwd.a_off[i] = ia(i) * p * q;
    fwd.b_off[i] = ib(i) * q * r;
    fwd.c_off[i] = i * p * r;
  }
  Shape os = lead;
  os.push_back(p);
  os.push_back(r);
  Tensor out(os);
  kernels::batched_gemm(a.value().data(), b.value().data(), out.data(), fwd, false);
  return tape.record(std::move(out), {a, b}, [fwd](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    if (Tensor* ga = ctx.input_grad(0)) {
      // dA = G * B^T
      kernels::GemmBatch bw;
      bw.p = fwd.p;
      bw.q = fwd.r;
      bw.r = fwd.q;
      bw.trans_b = true;
      bw.a_off = fwd.c_off;
      bw.b_off = fwd.b_off;
      bw.c_off = fwd.a_off;
      kernels::batched_gemm(g.data(), ctx.input(1).data(), ga->data(), bw, true);
    }
    if (Tensor* gb = ctx.input_grad(1)) {
      // dB = A^T * G
      kernels::GemmBatch bw;
      bw.p = fwd.q;
      bw.q = fwd.p;
      bw.r = fwd.r;
      bw.trans_a = true;
      bw.a_off = fwd.a_off;
      bw.b_off = fwd.c_off;
      bw.c_off = fwd.b_off;
      kernels::batched_gemm(ctx.input(0).data(), g.data(), gb->data(), bw, true);
    }
  });
}

Var affine(const Var& x, const Var& w, const Var& b, std::size_t axis) {
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (wv.rank() != 2) throw DimensionError("affine: weight must be rank 2, got " + shape_str(wv.shape()));
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(1)) {
    throw DimensionError("affine: bias " + shape_str(bv.shape()) + " does not match weight " +
                         shape_str(wv.shape()));
  }
  if (axis >= x.rank() || x.dim(axis) != wv.dim(0)) {
    throw DimensionError("affine: axis " + std::to_string(axis) + " of " + shape_str(x.shape()) +
                         " does not match weight rows " + std::to_string(wv.dim(0)));
  }
  Var y = nmode_mul(x, w, axis + 1);
  Shape bshape(x.rank() - axis, 1);
  bshape[0] = wv.dim(1);
  return add(y, reshape(b, bshape));
}

Var conv1d_dilated_causal(const Var& x, const Var& kernel, std::size_t dilation) {
  Tape& tape = common_tape({&x, &kernel});
  const Shape& xs = x.value().shape();
  const Shape& ks = kernel.value().shape();
  if (xs.size() < 2) throw DimensionError("conv1d: input needs rank >= 2 (..., L, C)");
  if (ks.size() != 3 || ks[1] != xs.back()) {
    throw DimensionError("conv1d: kernel " + shape_str(ks) + " incompatible with input " + shape_str(xs));
  }
  if (dilation < 1) throw DimensionError("conv1d: dilation must be >= 1");
  const std::size_t len = xs[xs.size() - 2], cin = xs.back(), k = ks[0], cout = ks[2];
  const std::size_t rows = shape_size(xs) / (len * cin);
  Shape os = xs;
  os.back() = cout;
  Tensor out(os);
  kernels::conv1d_causal(x.value().data(), rows, len, cin, kernel.value().data(), k, cout, dilation, out.data());
  return tape.record(std::move(out), {x, kernel}, [=](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    if (Tensor* gx = ctx.input_grad(0)) {
      kernels::conv1d_causal_grad_input(g.data(), rows, len, cin, ctx.input(1).data(), k, cout, dilation,
                                        gx->data());
    }
    if (Tensor* gw = ctx.input_grad(1)) {
      kernels::conv1d_causal_grad_kernel(ctx.input(0).data(), g.data(), rows, len, cin, k, cout, dilation,
                                         gw->data());
    }
  });
}

// ---------------------------------------------------------------------------

Var transpose(const Var& x, const std::vector<std::size_t>& perm) {
  const Tensor& xv = x.value();
  const Shape& s = xv.shape();
  const std::size_t r = s.size();
  if (perm.size() != r) throw DimensionError("transpose: permutation rank mismatch");
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw DimensionError("transpose: invalid permutation");
    seen[p] = true;
  }
  Shape os(r);
  for (std::size_t i = 0; i < r; ++i) os[i] = s[perm[i]];
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
  // src[i] = input offset of output element i.
  std::vector<std::size_t> src(xv.size());
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      src[i] = off;
      for (std::size_t ax = r; ax-- > 0;) {
        ++idx[ax];
        off += in_stride[perm[ax]];
        if (idx[ax] < os[ax]) break;
        off -= in_stride[perm[ax]] * idx[ax];
        idx[ax] = 0;
      }
    }
  }
  Tensor out(os);
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = xv[src[i]];
  return x.tape().record(std::move(out), {x}, [src = std::move(src)](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    Tensor* gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < src.size(); ++i) (*gx)[src[i]] += g[i];
  });
}

Var swap_last2(const Var& x) {
  const std::size_t r = x.rank();
  if (r < 2) throw DimensionError("swap_last2: rank must be >= 2");
  std::vector<std::size_t> perm(r);
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[r - 1], perm[r - 2]);
  return transpose(x, perm);
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    Tensor* gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  Tape& tape = parts[0].tape();
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range");
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (&p.tape() != &tape) throw GraphError("concat: operands recorded on different tapes");
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) {
        throw DimensionError("concat: shapes " + shape_str(s0) + " and " + shape_str(s) + " differ off-axis");
      }
    }
    widths.push_back(s[axis]);
    total += s[axis];
  }
  AxisView v = axis_view(s0, axis);
  Shape os = s0;
  os[axis] = total;
  Tensor out(os);
  std::size_t start = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    const std::size_t wk = widths[k];
    for (std::size_t p = 0; p < v.pre; ++p)
      std::copy_n(pv.data().begin() + static_cast<long>(p * wk * v.post), wk * v.post,
                  out.data().begin() + static_cast<long>((p * total + start) * v.post));
    start += wk;
  }
  return tape.record(std::move(out), parts, [v, widths, total](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    std::size_t start = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::size_t wk = widths[k];
      if (Tensor* gk = ctx.input_grad(k)) {
        for (std::size_t p = 0; p < v.pre; ++p)
          for (std::size_t e = 0; e < wk * v.post; ++e)
            (*gk)[p * wk * v.post + e] += g[(p * total + start) * v.post + e];
      }
      start += wk;
    }
  });
}

Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  const AxisView v = axis_view(xv.shape(), axis);
  if (begin >= end || end > v.n) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for extent " + std::to_string(v.n));
  }
  const std::size_t w = end - begin;
  Shape os = xv.shape();
  os[axis] = w;
  Tensor out(os);
  for (std::size_t p = 0; p < v.pre; ++p)
    std::copy_n(xv.data().begin() + static_cast<long>((p * v.n + begin) * v.post), w * v.post,
                out.data().begin() + static_cast<long>(p * w * v.post));
  return x.tape().record(std::move(out), {x}, [v, begin, w](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    Tensor* gx = ctx.input_grad(0);
    for (std::size_t p = 0; p < v.pre; ++p)
      for (std::size_t e = 0; e < w * v.post; ++e) (*gx)[(p * v.n + begin) * v.post + e] += g[p * w * v.post + e];
  });
}

Var broadcast_repeat(const Var& x, std::size_t axis, std::size_t k) {
  const Tensor& xv = x.value();
  const Shape& s = xv.shape();
  if (axis > s.size()) throw DimensionError("broadcast_repeat: axis out of range");
  if (k == 0) throw DimensionError("broadcast_repeat: k must be positive");
  std::size_t pre = 1, post = 1;
  for (std::size_t i = 0; i < axis; ++i) pre *= s[i];
  for (std::size_t i = axis; i < s.size(); ++i) post *= s[i];
  Shape os = s;
  os.insert(os.begin() + static_cast<long>(axis), k);
  Tensor out(os);
  for (std::size_t p = 0; p < pre; ++p)
    for (std::size_t r = 0; r < k; ++r)
      std::copy_n(xv.data().begin() + static_cast<long>(p * post), post,
                  out.data().begin() + static_cast<long>((p * k + r) * post));
  return x.tape().record(std::move(out), {x}, [pre, post, k](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    Tensor* gx = ctx.input_grad(0);
    for (std::size_t p = 0; p < pre; ++p)
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t q = 0; q < post; ++q) (*gx)[p * post + q] += g[(p * k + r) * post + q];
  });
}

}  // namespace gramode
