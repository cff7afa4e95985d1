#pragma once

#include <cstdint>

// Private blocked GEMM kernels. Accumulating variants (C += ...), row-major.
// Each output element is produced by exactly one thread with a fixed k
// order, so results are bitwise reproducible at any thread count.

namespace dseg::detail {

int gemm_threads();
void set_gemm_threads(int n);  // 0 restores the default

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);

// C[M,N] += Aᵀ * B, A stored as [K,M]
template <typename T>
void gemm_at_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);

// C[M,N] += A * Bᵀ, B stored as [N,K]
template <typename T>
void gemm_bt_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);

}  // namespace dseg::detail
