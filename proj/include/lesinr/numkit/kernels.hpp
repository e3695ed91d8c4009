#pragma once

#include <cstddef>
#include <span>

namespace lesinr::numkit::kernels {

// Dense kernels behind the recorded ops. Every output element is accumulated
// over the inner index in ascending order, which makes results independent
// of blocking and identical to a plain triple loop.

// out[r, :] = sum_k a[r, k] * b[k, :]  (out is overwritten)
template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t rows,
            std::size_t inner, std::size_t cols);

// out[k, :] += sum_r a[r, k] * g[r, :]  (accumulates a^T g into out)
template <typename T>
void matmul_tn_accumulate(std::span<const T> a, std::span<const T> g, std::span<T> out,
                          std::size_t rows, std::size_t inner, std::size_t cols);

// out = transpose(in), in is rows x cols
template <typename T>
void transpose(std::span<const T> in, std::span<T> out, std::size_t rows, std::size_t cols);

template <typename T>
T dot(std::span<const T> a, std::span<const T> b);

}  // namespace lesinr::numkit::kernels
