#pragma once

// Forward/backward building blocks on raw row-major spans.
// Reductions accumulate in double; storage stays float.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <numbers>
#include <span>
#include <vector>

namespace avq::kernels {

// out[M,N] = a[M,K] * b[K,N]  (overwrites out)
inline void gemm_nn(std::span<const float> a, std::span<const float> b, std::span<float> out, std::size_t m,
                    std::size_t k, std::size_t n) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* ar = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      const float* br = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(br[j]);
    }
    float* o = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) o[j] = static_cast<float>(acc[j]);
  }
}

// out[M,N] += a[M,K] * b[N,K]^T
inline void gemm_nt_acc(std::span<const float> a, std::span<const float> b, std::span<float> out, std::size_t m,
                        std::size_t k, std::size_t n) {
  std::vector<float> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* ar = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      const float* br = bt.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(br[j]);
    }
    float* o = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) o[j] += static_cast<float>(acc[j]);
  }
}

// out[K,N] += a[M,K]^T * b[M,N]
inline void gemm_tn_acc(std::span<const float> a, std::span<const float> b, std::span<float> out, std::size_t m,
                        std::size_t k, std::size_t n) {
  std::vector<double> acc(k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const float* ar = a.data() + i * k;
    const float* br = b.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      double* accr = acc.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) accr[j] += av * static_cast<double>(br[j]);
    }
  }
  for (std::size_t i = 0; i < k * n; ++i) out[i] += static_cast<float>(acc[i]);
}

// Four independent double lanes so the compiler can vectorize without
// reassociating; the lane order is fixed, so results are deterministic.
inline double dot(std::span<const float> a, std::span<const float> b) {
  double l[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t n = a.size(), n4 = n & ~std::size_t{3};
  for (std::size_t i = 0; i < n4; i += 4)
    for (std::size_t j = 0; j < 4; ++j) l[j] += static_cast<double>(a[i + j]) * static_cast<double>(b[i + j]);
  for (std::size_t i = n4; i < n; ++i) l[0] += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return (l[0] + l[1]) + (l[2] + l[3]);
}

inline double squared_norm(std::span<const float> a) { return dot(a, a); }

inline double squared_distance(std::span<const float> a, std::span<const float> b) {
  double l[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t n = a.size(), n4 = n & ~std::size_t{3};
  for (std::size_t i = 0; i < n4; i += 4)
    for (std::size_t j = 0; j < 4; ++j) {
      const double d = static_cast<double>(a[i + j]) - static_cast<double>(b[i + j]);
      l[j] += d * d;
    }
  for (std::size_t i = n4; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    l[0] += d * d;
  }
  return (l[0] + l[1]) + (l[2] + l[3]);
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

// Row-wise softmax in place over rows of length n.
inline void softmax_rows(std::span<float> x, std::size_t n) {
  const std::size_t rows = x.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    float* row = x.data() + r * n;
    const float mx = *std::max_element(row, row + n);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    for (std::size_t j = 0; j < n; ++j) row[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / sum);
  }
}

struct RowMoments {
  double mean;
  double inv_std;
};

inline RowMoments row_moments(std::span<const float> row, double eps) {
  double mean = 0.0;
  for (float v : row) mean += v;
  mean /= static_cast<double>(row.size());
  double var = 0.0;
  for (float v : row) var += (v - mean) * (v - mean);
  var /= static_cast<double>(row.size());
  return {mean, 1.0 / std::sqrt(var + eps)};
}

}  // namespace avq::kernels
