#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

// Raw row-major kernels. Every output row depends only on the matching row of
// the left operand and the accumulation order over the inner extent is fixed,
// so results are reproducible bit-for-bit and independent of the row count.

namespace tirtrack::gemm {

/// c[m×n] += a[m×k] · b[k×n]
inline void nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
               const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* cr = c + i * n;
    const double* ar = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      const double* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

/// out[cols×rows] = in[rows×cols]ᵀ
inline void transpose(std::size_t rows, std::size_t cols, const double* in,
                      double* out) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kBlock) {
    for (std::size_t j0 = 0; j0 < cols; j0 += kBlock) {
      const std::size_t i1 = std::min(rows, i0 + kBlock);
      const std::size_t j1 = std::min(cols, j0 + kBlock);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) out[j * rows + i] = in[i * cols + j];
    }
  }
}

/// c[m×n] += a[m×k] · b[n×k]ᵀ
inline void nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
               const double* b, double* c) {
  std::vector<double> bt(k * n);
  transpose(n, k, b, bt.data());
  nn(m, n, k, a, bt.data(), c);
}

/// c[m×n] += a[k×m]ᵀ · b[k×n]
inline void tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
               const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ar = a + p * m;
    const double* br = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* cr = c + i * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

}  // namespace tirtrack::gemm
