#include "gramode/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "gramode/errors.hpp"

#ifdef GRAMODE_HAVE_OPENMP
#include <omp.h>
#endif

namespace gramode::kernels {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelGrain = 1u << 14;

inline long as_long(std::size_t v) { return static_cast<long>(v); }

}  // namespace

int max_threads() {
#ifdef GRAMODE_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_max_threads(int n) {
#ifdef GRAMODE_HAVE_OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

void mode_product(std::span<const double> in, std::size_t pre, std::size_t j, std::size_t post,
                  std::span<const double> m, std::size_t lo, std::span<double> out) {
  const std::size_t work = pre * j * post * lo;
  const double* src = in.data();
  const double* mat = m.data();
  double* dst = out.data();
  if (post == 1) {
#pragma omp parallel for schedule(static) if (work > kParallelGrain)
    for (long p = 0; p < as_long(pre); ++p) {
      double* row = dst + p * lo;
      std::fill(row, row + lo, 0.0);
      const double* irow = src + p * j;
      for (std::size_t jj = 0; jj < j; ++jj) {
        const double a = irow[jj];
        const double* mrow = mat + jj * lo;
#pragma omp simd
        for (std::size_t l = 0; l < lo; ++l) row[l] += a * mrow[l];
      }
    }
    return;
  }
#pragma omp parallel for collapse(2) schedule(static) if (work > kParallelGrain)
  for (long p = 0; p < as_long(pre); ++p) {
    for (long l = 0; l < as_long(lo); ++l) {
      double* orow = dst + (p * lo + l) * post;
      std::fill(orow, orow + post, 0.0);
      for (std::size_t jj = 0; jj < j; ++jj) {
        const double c = mat[jj * lo + l];
        const double* irow = src + (p * j + jj) * post;
#pragma omp simd
        for (std::size_t q = 0; q < post; ++q) orow[q] += c * irow[q];
      }
    }
  }
}

void mode_product_grad_input(std::span<const double> g, std::size_t pre, std::size_t j, std::size_t post,
                             std::span<const double> m, std::size_t lo, std::span<double> gin) {
  const std::size_t work = pre * j * post * lo;
  const double* gd = g.data();
  const double* mat = m.data();
  double* dst = gin.data();
#pragma omp parallel for collapse(2) schedule(static) if (work > kParallelGrain)
  for (long p = 0; p < as_long(pre); ++p) {
    for (long jj = 0; jj < as_long(j); ++jj) {
      double* orow = dst + (p * j + jj) * post;
      const double* mrow = mat + jj * lo;
      for (std::size_t l = 0; l < lo; ++l) {
        const double c = mrow[l];
        const double* grow = gd + (p * lo + l) * post;
#pragma omp simd
        for (std::size_t q = 0; q < post; ++q) orow[q] += c * grow[q];
      }
    }
  }
}

void mode_product_grad_matrix(std::span<const double> in, std::span<const double> g, std::size_t pre,
                              std::size_t j, std::size_t post, std::size_t lo, std::span<double> gm) {
  const std::size_t work = pre * j * post * lo;
  const double* src = in.data();
  const double* gd = g.data();
  double* dst = gm.data();
#pragma omp parallel for collapse(2) schedule(static) if (work > kParallelGrain)
  for (long jj = 0; jj < as_long(j); ++jj) {
    for (long l = 0; l < as_long(lo); ++l) {
      double acc = 0.0;
      for (std::size_t p = 0; p < pre; ++p) {
        const double* irow = src + (p * j + jj) * post;
        const double* grow = gd + (p * lo + l) * post;
        for (std::size_t q = 0; q < post; ++q) acc += irow[q] * grow[q];
      }
      dst[jj * lo + l] += acc;
    }
  }
}

namespace {

void gemm_block(const double* a, const double* b, double* c, std::size_t p, std::size_t q, std::size_t r,
                bool ta, bool tb) {
  // c[p x r] += op(a)[p x q] * op(b)[q x r]; i-k-j order keeps the inner loop
  // contiguous in c for the untransposed-b case.
  for (std::size_t i = 0; i < p; ++i) {
    double* crow = c + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const double av = ta ? a[k * p + i] : a[i * q + k];
      if (!tb) {
        const double* brow = b + k * r;
#pragma omp simd
        for (std::size_t jj = 0; jj < r; ++jj) crow[jj] += av * brow[jj];
      } else {
        for (std::size_t jj = 0; jj < r; ++jj) crow[jj] += av * b[jj * q + k];
      }
    }
  }
}

}  // namespace

void batched_gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
                  const GemmBatch& batch, bool accumulate) {
  const std::size_t n = batch.c_off.size();
  if (batch.a_off.size() != n || batch.b_off.size() != n) {
    throw ContractError("batched_gemm: offset lists differ in length");
  }
  // Group batch entries by output block, preserving batch order inside a group.
  std::vector<std::size_t> group_target;
  std::vector<std::vector<std::size_t>> groups;
  {
    std::unordered_map<std::size_t, std::size_t> index;
    for (std::size_t i = 0; i < n; ++i) {
      auto [it, inserted] = index.try_emplace(batch.c_off[i], groups.size());
      if (inserted) {
        group_target.push_back(batch.c_off[i]);
        groups.emplace_back();
      }
      groups[it->second].push_back(i);
    }
  }
  const std::size_t block = batch.p * batch.r;
  const std::size_t work = n * batch.p * batch.q * batch.r;
#pragma omp parallel for schedule(static) if (work > kParallelGrain && groups.size() > 1)
  for (long gi = 0; gi < as_long(groups.size()); ++gi) {
    double* cblk = c.data() + group_target[gi];
    if (!accumulate) std::fill(cblk, cblk + block, 0.0);
    for (std::size_t i : groups[gi]) {
      gemm_block(a.data() + batch.a_off[i], b.data() + batch.b_off[i], cblk, batch.p, batch.q, batch.r,
                 batch.trans_a, batch.trans_b);
    }
  }
}

void conv1d_causal(std::span<const double> x, std::size_t rows, std::size_t len, std::size_t cin,
                   std::span<const double> w, std::size_t k, std::size_t cout, std::size_t dilation,
                   std::span<double> out) {
  const std::size_t work = rows * len * k * cin * cout;
#pragma omp parallel for schedule(static) if (work > kParallelGrain)
  for (long r = 0; r < as_long(rows); ++r) {
    const double* xr = x.data() + r * len * cin;
    double* orow = out.data() + r * len * cout;
    std::fill(orow, orow + len * cout, 0.0);
    for (std::size_t l = 0; l < len; ++l) {
      double* ol = orow + l * cout;
      for (std::size_t t = 0; t < k; ++t) {
        const std::size_t back = (k - 1 - t) * dilation;
        if (back > l) continue;
        const double* xl = xr + (l - back) * cin;
        const double* wt = w.data() + t * cin * cout;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double xv = xl[ci];
          const double* wrow = wt + ci * cout;
#pragma omp simd
          for (std::size_t co = 0; co < cout; ++co) ol[co] += xv * wrow[co];
        }
      }
    }
  }
}

void conv1d_causal_grad_input(std::span<const double> g, std::size_t rows, std::size_t len, std::size_t cin,
                              std::span<const double> w, std::size_t k, std::size_t cout,
                              std::size_t dilation, std::span<double> gx) {
  const std::size_t work = rows * len * k * cin * cout;
#pragma omp parallel for schedule(static) if (work > kParallelGrain)
  for (long r = 0; r < as_long(rows); ++r) {
    const double* gr = g.data() + r * len * cout;
    double* gxr = gx.data() + r * len * cin;
    for (std::size_t s = 0; s < len; ++s) {
      double* gxs = gxr + s * cin;
      for (std::size_t t = 0; t < k; ++t) {
        const std::size_t l = s + (k - 1 - t) * dilation;
        if (l >= len) continue;
        const double* gl = gr + l * cout;
        const double* wt = w.data() + t * cin * cout;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double* wrow = wt + ci * cout;
          double acc = 0.0;
          for (std::size_t co = 0; co < cout; ++co) acc += gl[co] * wrow[co];
          gxs[ci] += acc;
        }
      }
    }
  }
}

void conv1d_causal_grad_kernel(std::span<const double> x, std::span<const double> g, std::size_t rows,
                               std::size_t len, std::size_t cin, std::size_t k, std::size_t cout,
                               std::size_t dilation, std::span<double> gw) {
  const std::size_t work = rows * len * k * cin * cout;
#pragma omp parallel for collapse(2) schedule(static) if (work > kParallelGrain)
  for (long t = 0; t < as_long(k); ++t) {
    for (long ci = 0; ci < as_long(cin); ++ci) {
      const std::size_t back = (k - 1 - t) * dilation;
      double* gwrow = gw.data() + (t * cin + ci) * cout;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * len * cin;
        const double* gr = g.data() + r * len * cout;
        for (std::size_t l = back; l < len; ++l) {
          const double xv = xr[(l - back) * cin + ci];
          const double* gl = gr + l * cout;
#pragma omp simd
          for (std::size_t co = 0; co < cout; ++co) gwrow[co] += xv * gl[co];
        }
      }
    }
  }
}

double dtw(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw InputError("dtw: series must be nonempty");
  const std::size_t m = y.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    cur[0] = inf;
    const double xi = x[i - 1];
    for (std::size_t jj = 1; jj <= m; ++jj) {
      const double best = std::min({prev[jj], cur[jj - 1], prev[jj - 1]});
      cur[jj] = std::abs(xi - y[jj - 1]) + best;
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

std::vector<double> pairwise_dtw(const std::vector<std::vector<double>>& series) {
  const std::size_t n = series.size();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t jj = i + 1; jj < n; ++jj) pairs.emplace_back(i, jj);
  std::vector<double> dist(n * n, 0.0);
#pragma omp parallel for schedule(dynamic)
  for (long pi = 0; pi < as_long(pairs.size()); ++pi) {
    const auto [i, jj] = pairs[pi];
    const double d = dtw(series[i], series[jj]);
    dist[i * n + jj] = d;
    dist[jj * n + i] = d;
  }
  return dist;
}

}  // namespace gramode::kernels
