#include "gemm.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dseg::detail {

namespace {
std::atomic<int> g_thread_override{0};
}

int gemm_threads() {
  int n = g_thread_override.load(std::memory_order_relaxed);
  if (n > 0) return n;
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return static_cast<int>(std::thread::hardware_concurrency());
#endif
}

void set_gemm_threads(int n) {
  g_thread_override.store(n, std::memory_order_relaxed);
}

namespace {
constexpr int64_t kColBlock = 512;  // inner j tile, fits L1 alongside a B row
}

template <typename T>
void gemm_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  const int nth = gemm_threads();
#pragma omp parallel for schedule(static) num_threads(nth)
  for (int64_t i = 0; i < m; ++i) {
    const T* __restrict__ arow = a + i * k;
    T* __restrict__ crow = c + i * n;
    for (int64_t jb = 0; jb < n; jb += kColBlock) {
      const int64_t je = std::min(jb + kColBlock, n);
      for (int64_t p = 0; p < k; ++p) {
        const T av = arow[p];
        if (av == T(0)) continue;
        const T* __restrict__ brow = b + p * n;
        for (int64_t j = jb; j < je; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
void gemm_at_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  // A is [K,M]: C[i,j] += sum_p A[p,i] * B[p,j]
  const int nth = gemm_threads();
#pragma omp parallel for schedule(static) num_threads(nth)
  for (int64_t i = 0; i < m; ++i) {
    T* __restrict__ crow = c + i * n;
    for (int64_t jb = 0; jb < n; jb += kColBlock) {
      const int64_t je = std::min(jb + kColBlock, n);
      for (int64_t p = 0; p < k; ++p) {
        const T av = a[p * m + i];
        if (av == T(0)) continue;
        const T* __restrict__ brow = b + p * n;
        for (int64_t j = jb; j < je; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
void gemm_bt_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  // B is [N,K]: C[i,j] += dot(A[i,:], B[j,:]) -- both rows contiguous.
  const int nth = gemm_threads();
#pragma omp parallel for schedule(static) num_threads(nth)
  for (int64_t i = 0; i < m; ++i) {
    const T* __restrict__ arow = a + i * k;
    T* __restrict__ crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* __restrict__ brow = b + j * k;
      T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      int64_t p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += arow[p] * brow[p];
        s1 += arow[p + 1] * brow[p + 1];
        s2 += arow[p + 2] * brow[p + 2];
        s3 += arow[p + 3] * brow[p + 3];
      }
      T s = ((s0 + s1) + (s2 + s3));
      for (; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

template void gemm_acc<float>(const float*, const float*, float*, int64_t, int64_t, int64_t);
template void gemm_acc<double>(const double*, const double*, double*, int64_t, int64_t, int64_t);
template void gemm_at_acc<float>(const float*, const float*, float*, int64_t, int64_t, int64_t);
template void gemm_at_acc<double>(const double*, const double*, double*, int64_t, int64_t, int64_t);
template void gemm_bt_acc<float>(const float*, const float*, float*, int64_t, int64_t, int64_t);
template void gemm_bt_acc<double>(const double*, const double*, double*, int64_t, int64_t, int64_t);

}  // namespace dseg::detail
