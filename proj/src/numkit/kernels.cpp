#include "lesinr/numkit/kernels.hpp"

#include <algorithm>

namespace lesinr::numkit::kernels {
namespace {

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 16;

}  // namespace

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t rows,
            std::size_t inner, std::size_t cols) {
  const T* __restrict A = a.data();
  const T* __restrict B = b.data();
  T* __restrict C = out.data();

  const std::size_t full_rows = rows - rows % kRowBlock;
  const std::size_t full_cols = cols - cols % kColBlock;

  for (std::size_t r0 = 0; r0 < full_rows; r0 += kRowBlock) {
    for (std::size_t j0 = 0; j0 < full_cols; j0 += kColBlock) {
      T acc[kRowBlock][kColBlock] = {};
      for (std::size_t k = 0; k < inner; ++k) {
        const T* bk = B + k * cols + j0;
        const T a0 = A[(r0 + 0) * inner + k];
        const T a1 = A[(r0 + 1) * inner + k];
        const T a2 = A[(r0 + 2) * inner + k];
        const T a3 = A[(r0 + 3) * inner + k];
        for (std::size_t jj = 0; jj < kColBlock; ++jj) {
          const T bv = bk[jj];
          acc[0][jj] += a0 * bv;
          acc[1][jj] += a1 * bv;
          acc[2][jj] += a2 * bv;
          acc[3][jj] += a3 * bv;
        }
      }
      for (std::size_t i = 0; i < kRowBlock; ++i) {
        std::copy_n(acc[i], kColBlock, C + (r0 + i) * cols + j0);
      }
    }
  }

  // Ragged edges: plain loops with the same accumulation order.
  auto scalar_tile = [&](std::size_t r_begin, std::size_t r_end, std::size_t j_begin,
                         std::size_t j_end) {
    for (std::size_t r = r_begin; r < r_end; ++r) {
      for (std::size_t j = j_begin; j < j_end; ++j) {
        T s = T{0};
        for (std::size_t k = 0; k < inner; ++k) s += A[r * inner + k] * B[k * cols + j];
        C[r * cols + j] = s;
      }
    }
  };
  scalar_tile(0, full_rows, full_cols, cols);
  scalar_tile(full_rows, rows, 0, cols);
}

template <typename T>
void matmul_tn_accumulate(std::span<const T> a, std::span<const T> g, std::span<T> out,
                          std::size_t rows, std::size_t inner, std::size_t cols) {
  const T* __restrict A = a.data();
  const T* __restrict G = g.data();
  T* __restrict O = out.data();

  const std::size_t full_k = inner - inner % kRowBlock;
  const std::size_t full_cols = cols - cols % kColBlock;

  for (std::size_t k0 = 0; k0 < full_k; k0 += kRowBlock) {
    for (std::size_t j0 = 0; j0 < full_cols; j0 += kColBlock) {
      T acc[kRowBlock][kColBlock];
      for (std::size_t i = 0; i < kRowBlock; ++i) {
        std::copy_n(O + (k0 + i) * cols + j0, kColBlock, acc[i]);
      }
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = G + r * cols + j0;
        const T* ar = A + r * inner + k0;
        const T a0 = ar[0];
        const T a1 = ar[1];
        const T a2 = ar[2];
        const T a3 = ar[3];
        for (std::size_t jj = 0; jj < kColBlock; ++jj) {
          const T gv = gr[jj];
          acc[0][jj] += a0 * gv;
          acc[1][jj] += a1 * gv;
          acc[2][jj] += a2 * gv;
          acc[3][jj] += a3 * gv;
        }
      }
      for (std::size_t i = 0; i < kRowBlock; ++i) {
        std::copy_n(acc[i], kColBlock, O + (k0 + i) * cols + j0);
      }
    }
  }

  auto scalar_tile = [&](std::size_t k_begin, std::size_t k_end, std::size_t j_begin,
                         std::size_t j_end) {
    for (std::size_t k = k_begin; k < k_end; ++k) {
      for (std::size_t j = j_begin; j < j_end; ++j) {
        T s = O[k * cols + j];
        for (std::size_t r = 0; r < rows; ++r) s += A[r * inner + k] * G[r * cols + j];
        O[k * cols + j] = s;
      }
    }
  };
  scalar_tile(0, full_k, full_cols, cols);
  scalar_tile(full_k, inner, 0, cols);
}

template <typename T>
void transpose(std::span<const T> in, std::span<T> out, std::size_t rows, std::size_t cols) {
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t r1 = std::min(rows, r0 + kTile);
      const std::size_t c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
      }
    }
  }
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  // Eight interleaved partial sums, combined in a fixed order.
  constexpr std::size_t kLanes = 8;
  T lanes[kLanes] = {};
  const std::size_t n = a.size();
  const std::size_t full = n - n % kLanes;
  for (std::size_t i = 0; i < full; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += a[i + l] * b[i + l];
  }
  T tail = T{0};
  for (std::size_t i = full; i < n; ++i) tail += a[i] * b[i];
  T s = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
  return s + tail;
}

template void matmul<float>(std::span<const float>, std::span<const float>, std::span<float>,
                            std::size_t, std::size_t, std::size_t);
template void matmul<double>(std::span<const double>, std::span<const double>, std::span<double>,
                             std::size_t, std::size_t, std::size_t);
template void matmul_tn_accumulate<float>(std::span<const float>, std::span<const float>,
                                          std::span<float>, std::size_t, std::size_t, std::size_t);
template void matmul_tn_accumulate<double>(std::span<const double>, std::span<const double>,
                                           std::span<double>, std::size_t, std::size_t,
                                           std::size_t);
template void transpose<float>(std::span<const float>, std::span<float>, std::size_t, std::size_t);
template void transpose<double>(std::span<const double>, std::span<double>, std::size_t,
                                std::size_t);
template float dot<float>(std::span<const float>, std::span<const float>);
template double dot<double>(std::span<const double>, std::span<const double>);

}  // namespace lesinr::numkit::kernels
