#pragma once

// Data-parallel inner loops. Every kernel has a scalar reference version and,
// where the target supports it, a vectorized variant. The active variant is
// chosen once at startup from CPUID (or DCSE_SIMD=scalar|avx2|neon) and can be
// overridden for equivalence testing.

#include <cstddef>
#include <string_view>

namespace dcse::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);
bool isa_available(Isa isa);
Isa active_isa();
// Throws std::invalid_argument if the requested ISA is not available.
void force_isa(Isa isa);

template <class T>
struct KernelTable {
  T (*dot)(const T* a, const T* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
  // y = alpha * x + y, elementwise product variant: y += x * z
  void (*fma)(const T* x, const T* z, T* y, std::size_t n);
};

template <class T>
const KernelTable<T>& table_for(Isa isa);

template <class T>
const KernelTable<T>& active();

template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
  return active<T>().dot(a, b, n);
}

template <class T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
  active<T>().axpy(alpha, x, y, n);
}

// Row-major GEMM built on the dispatched dot/axpy kernels.
//   gemm_nn: C[m x n] (+)= A[m x k] * B[k x n]
//   gemm_nt: C[m x n] (+)= A[m x k] * B[n x k]^T
//   gemm_tn: C[m x n] (+)= A[k x m]^T * B[k x n]
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

namespace scalar {
template <class T>
T dot(const T* a, const T* b, std::size_t n);
template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n);
template <class T>
void fma(const T* x, const T* z, T* y, std::size_t n);
}  // namespace scalar

}  // namespace dcse::kernels
