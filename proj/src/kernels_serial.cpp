// Straight-line reference versions of the parallel kernels. Written for
// obviousness, not speed: one output element at a time, full DP tables.

#include <algorithm>
#include <cmath>
#include <limits>

#include "gramode/errors.hpp"
#include "gramode/kernels.hpp"

namespace gramode::kernels::serial {

void mode_product(std::span<const double> in, std::size_t pre, std::size_t j, std::size_t post,
                  std::span<const double> m, std::size_t lo, std::span<double> out) {
  for (std::size_t p = 0; p < pre; ++p)
    for (std::size_t l = 0; l < lo; ++l)
      for (std::size_t q = 0; q < post; ++q) {
        double s = 0.0;
        for (std::size_t jj = 0; jj < j; ++jj) s += in[(p * j + jj) * post + q] * m[jj * lo + l];
        out[(p * lo + l) * post + q] = s;
      }
}

void mode_product_grad_input(std::span<const double> g, std::size_t pre, std::size_t j, std::size_t post,
                             std::span<const double> m, std::size_t lo, std::span<double> gin) {
  for (std::size_t p = 0; p < pre; ++p)
    for (std::size_t jj = 0; jj < j; ++jj)
      for (std::size_t q = 0; q < post; ++q) {
        double s = 0.0;
        for (std::size_t l = 0; l < lo; ++l) s += g[(p * lo + l) * post + q] * m[jj * lo + l];
        gin[(p * j + jj) * post + q] += s;
      }
}

void mode_product_grad_matrix(std::span<const double> in, std::span<const double> g, std::size_t pre,
                              std::size_t j, std::size_t post, std::size_t lo, std::span<double> gm) {
  for (std::size_t jj = 0; jj < j; ++jj)
    for (std::size_t l = 0; l < lo; ++l) {
      double s = 0.0;
      for (std::size_t p = 0; p < pre; ++p)
        for (std::size_t q = 0; q < post; ++q) s += in[(p * j + jj) * post + q] * g[(p * lo + l) * post + q];
      gm[jj * lo + l] += s;
    }
}

void batched_gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
                  const GemmBatch& batch, bool accumulate) {
  const auto [p, q, r] = std::tuple{batch.p, batch.q, batch.r};
  if (!accumulate) {
    for (auto off : batch.c_off) std::fill(c.begin() + off, c.begin() + off + p * r, 0.0);
  }
  for (std::size_t n = 0; n < batch.c_off.size(); ++n) {
    const double* ab = a.data() + batch.a_off[n];
    const double* bb = b.data() + batch.b_off[n];
    double* cb = c.data() + batch.c_off[n];
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t jj = 0; jj < r; ++jj) {
        double s = 0.0;
        for (std::size_t k = 0; k < q; ++k) {
          const double av = batch.trans_a ? ab[k * p + i] : ab[i * q + k];
          const double bv = batch.trans_b ? bb[jj * q + k] : bb[k * r + jj];
          s += av * bv;
        }
        cb[i * r + jj] += s;
      }
  }
}

void conv1d_causal(std::span<const double> x, std::size_t rows, std::size_t len, std::size_t cin,
                   std::span<const double> w, std::size_t k, std::size_t cout, std::size_t dilation,
                   std::span<double> out) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t co = 0; co < cout; ++co) {
        double s = 0.0;
        for (std::size_t t = 0; t < k; ++t) {
          const long src = static_cast<long>(l) - static_cast<long>((k - 1 - t) * dilation);
          if (src < 0) continue;
          for (std::size_t ci = 0; ci < cin; ++ci)
            s += x[(r * len + static_cast<std::size_t>(src)) * cin + ci] * w[(t * cin + ci) * cout + co];
        }
        out[(r * len + l) * cout + co] = s;
      }
}

void conv1d_causal_grad_input(std::span<const double> g, std::size_t rows, std::size_t len, std::size_t cin,
                              std::span<const double> w, std::size_t k, std::size_t cout,
                              std::size_t dilation, std::span<double> gx) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t t = 0; t < k; ++t) {
        const long src = static_cast<long>(l) - static_cast<long>((k - 1 - t) * dilation);
        if (src < 0) continue;
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t co = 0; co < cout; ++co)
            gx[(r * len + static_cast<std::size_t>(src)) * cin + ci] +=
                g[(r * len + l) * cout + co] * w[(t * cin + ci) * cout + co];
      }
}

void conv1d_causal_grad_kernel(std::span<const double> x, std::span<const double> g, std::size_t rows,
                               std::size_t len, std::size_t cin, std::size_t k, std::size_t cout,
                               std::size_t dilation, std::span<double> gw) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t t = 0; t < k; ++t) {
        const long src = static_cast<long>(l) - static_cast<long>((k - 1 - t) * dilation);
        if (src < 0) continue;
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t co = 0; co < cout; ++co)
            gw[(t * cin + ci) * cout + co] +=
                x[(r * len + static_cast<std::size_t>(src)) * cin + ci] * g[(r * len + l) * cout + co];
      }
}

double dtw(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw InputError("dtw: series must be nonempty");
  const std::size_t n = x.size(), m = y.size();
  std::vector<double> d(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t jj = 0; jj < m; ++jj) {
      const double cost = std::abs(x[i] - y[jj]);
      if (i == 0 && jj == 0) {
        d[0] = cost;
      } else if (i == 0) {
        d[jj] = cost + d[jj - 1];
      } else if (jj == 0) {
        d[i * m] = cost + d[(i - 1) * m];
      } else {
        d[i * m + jj] = cost + std::min({d[(i - 1) * m + jj], d[i * m + jj - 1], d[(i - 1) * m + jj - 1]});
      }
    }
  return d[n * m - 1];
}

std::vector<double> pairwise_dtw(const std::vector<std::vector<double>>& series) {
  const std::size_t n = series.size();
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t jj = i + 1; jj < n; ++jj) {
      const double d = dtw(series[i], series[jj]);
      dist[i * n + jj] = d;
      dist[jj * n + i] = d;
    }
  return dist;
}

}  // namespace gramode::kernels::serial
