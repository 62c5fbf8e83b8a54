#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

#include "dcse/kernels.hpp"
#include "simd_variants.hpp"

namespace dcse::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(DCSE_HAVE_AVX2_TU) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

bool cpu_has_neon() {
#if defined(DCSE_HAVE_NEON_TU)
  return true;  // mandatory on AArch64
#else
  return false;
#endif
}

Isa detect() {
  if (const char* env = std::getenv("DCSE_SIMD")) {
    if (std::strcmp(env, "scalar") == 0) return Isa::scalar;
    if (std::strcmp(env, "avx2") == 0 && cpu_has_avx2()) return Isa::avx2;
    if (std::strcmp(env, "neon") == 0 && cpu_has_neon()) return Isa::neon;
  }
  if (cpu_has_avx2()) return Isa::avx2;
  if (cpu_has_neon()) return Isa::neon;
  return Isa::scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

const KernelTable<float> kScalarF32{&scalar::dot<float>, &scalar::axpy<float>, &scalar::fma<float>};
const KernelTable<double> kScalarF64{&scalar::dot<double>, &scalar::axpy<double>, &scalar::fma<double>};
#if defined(DCSE_HAVE_AVX2_TU)
const KernelTable<float> kAvx2F32{&avx2::dot_f32, &avx2::axpy_f32, &avx2::fma_f32};
const KernelTable<double> kAvx2F64{&avx2::dot_f64, &avx2::axpy_f64, &avx2::fma_f64};
#endif
#if defined(DCSE_HAVE_NEON_TU)
const KernelTable<float> kNeonF32{&neon::dot_f32, &neon::axpy_f32, &neon::fma_f32};
const KernelTable<double> kNeonF64{&neon::dot_f64, &neon::axpy_f64, &neon::fma_f64};
#endif

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "unknown";
}

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::scalar: return true;
    case Isa::avx2: return cpu_has_avx2();
    case Isa::neon: return cpu_has_neon();
  }
  return false;
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw std::invalid_argument("ISA not available on this CPU: " + std::string(isa_name(isa)));
  }
  current().store(isa, std::memory_order_relaxed);
}

template <>
const KernelTable<float>& table_for<float>(Isa isa) {
  switch (isa) {
#if defined(DCSE_HAVE_AVX2_TU)
    case Isa::avx2: return kAvx2F32;
#endif
#if defined(DCSE_HAVE_NEON_TU)
    case Isa::neon: return kNeonF32;
#endif
    default: return kScalarF32;
  }
}

template <>
const KernelTable<double>& table_for<double>(Isa isa) {
  switch (isa) {
#if defined(DCSE_HAVE_AVX2_TU)
    case Isa::avx2: return kAvx2F64;
#endif
#if defined(DCSE_HAVE_NEON_TU)
    case Isa::neon: return kNeonF64;
#endif
    default: return kScalarF64;
  }
}

template <class T>
const KernelTable<T>& active() {
  return table_for<T>(active_isa());
}

template const KernelTable<float>& active<float>();
template const KernelTable<double>& active<double>();

template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  const auto& kt = active<T>();
  if (!accumulate) std::memset(c, 0, m * n * sizeof(T));
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av != T{0}) kt.axpy(av, b + p * n, crow, n);
    }
  }
}

template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  const auto& kt = active<T>();
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T v = kt.dot(arow, b + j * k, k);
      crow[j] = accumulate ? crow[j] + v : v;
    }
  }
}

template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  const auto& kt = active<T>();
  if (!accumulate) std::memset(c, 0, m * n * sizeof(T));
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av != T{0}) kt.axpy(av, brow, c + i * n, n);
    }
  }
}

template void gemm_nn<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm_nn<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
template void gemm_nt<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm_nt<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
template void gemm_tn<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm_tn<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);

}  // namespace dcse::kernels
