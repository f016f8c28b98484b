#pragma once

// Numeric kernels behind the tensor engine. Every kernel exists twice: the
// OpenMP version in gramode::kernels and a plain loop version in
// gramode::kernels::serial. The serial versions are the reference the tests
// and benchmarks compare against; the engine only calls the parallel ones.
//
// Parallel loops only ever split over output elements, and every output is
// reduced in a fixed order by one thread, so results are bit-identical for
// any thread count.

#include <cstddef>
#include <span>
#include <vector>

namespace gramode::kernels {

// Number of threads the parallel kernels may use (wraps omp_get_max_threads).
int max_threads();
void set_max_threads(int n);

// Mode product on a tensor viewed as (pre, J, post):
//   out[p, l, q] = sum_j in[p, j, q] * m[j, l],   m is J x lo.
void mode_product(std::span<const double> in, std::size_t pre, std::size_t j, std::size_t post,
                  std::span<const double> m, std::size_t lo, std::span<double> out);
// gin[p, j, q] += sum_l g[p, l, q] * m[j, l]
void mode_product_grad_input(std::span<const double> g, std::size_t pre, std::size_t j, std::size_t post,
                             std::span<const double> m, std::size_t lo, std::span<double> gin);
// gm[j, l] += sum_{p, q} in[p, j, q] * g[p, l, q]
void mode_product_grad_matrix(std::span<const double> in, std::span<const double> g, std::size_t pre,
                              std::size_t j, std::size_t post, std::size_t lo, std::span<double> gm);

// Batched GEMM: for each batch index i,
//   C[c_off[i]] (+)= op(A[a_off[i]]) * op(B[b_off[i]])
// with op(A) of shape p x q and op(B) of shape q x r. Several batch entries
// may target the same C block (broadcast gradients); they are accumulated in
// batch order. When accumulate is false every targeted block is overwritten
// by the sum of its contributions.
struct GemmBatch {
  std::size_t p = 0, q = 0, r = 0;
  bool trans_a = false, trans_b = false;
  std::vector<std::size_t> a_off, b_off, c_off;
};
void batched_gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
                  const GemmBatch& batch, bool accumulate);

// Causal dilated 1-D convolution over rows of length len:
//   out[r, l, co] = sum_{t < k} sum_ci x[r, l - (k-1-t)*d, ci] * w[t, ci, co]
// with zero padding for negative time. w[k-1] taps the current step.
void conv1d_causal(std::span<const double> x, std::size_t rows, std::size_t len, std::size_t cin,
                   std::span<const double> w, std::size_t k, std::size_t cout, std::size_t dilation,
                   std::span<double> out);
void conv1d_causal_grad_input(std::span<const double> g, std::size_t rows, std::size_t len, std::size_t cin,
                              std::span<const double> w, std::size_t k, std::size_t cout,
                              std::size_t dilation, std::span<double> gx);
void conv1d_causal_grad_kernel(std::span<const double> x, std::span<const double> g, std::size_t rows,
                               std::size_t len, std::size_t cin, std::size_t k, std::size_t cout,
                               std::size_t dilation, std::span<double> gw);

// Classic DTW with absolute-difference cost and {match, insert, delete} steps.
double dtw(std::span<const double> x, std::span<const double> y);
// Symmetric N x N matrix of pairwise DTW distances (zero diagonal), row-major.
std::vector<double> pairwise_dtw(const std::vector<std::vector<double>>& series);

namespace serial {

void mode_product(std::span<const double> in, std::size_t pre, std::size_t j, std::size_t post,
                  std::span<const double> m, std::size_t lo, std::span<double> out);
void mode_product_grad_input(std::span<const double> g, std::size_t pre, std::size_t j, std::size_t post,
                             std::span<const double> m, std::size_t lo, std::span<double> gin);
void mode_product_grad_matrix(std::span<const double> in, std::span<const double> g, std::size_t pre,
                              std::size_t j, std::size_t post, std::size_t lo, std::span<double> gm);
void batched_gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
                  const GemmBatch& batch, bool accumulate);
void conv1d_causal(std::span<const double> x, std::size_t rows, std::size_t len, std::size_t cin,
                   std::span<const double> w, std::size_t k, std::size_t cout, std::size_t dilation,
                   std::span<double> out);
void conv1d_causal_grad_input(std::span<const double> g, std::size_t rows, std::size_t len, std::size_t cin,
                              std::span<const double> w, std::size_t k, std::size_t cout,
                              std::size_t dilation, std::span<double> gx);
void conv1d_causal_grad_kernel(std::span<const double> x, std::span<const double> g, std::size_t rows,
                               std::size_t len, std::size_t cin, std::size_t k, std::size_t cout,
                               std::size_t dilation, std::span<double> gw);
double dtw(std::span<const double> x, std::span<const double> y);
std::vector<double> pairwise_dtw(const std::vector<std::vector<double>>& series);

}  // namespace serial
}  // namespace gramode::kernels
