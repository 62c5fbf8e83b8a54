#pragma once

#include <cstddef>

namespace dcse::kernels {

#if defined(__x86_64__) || defined(_M_X64)
#define DCSE_HAVE_AVX2_TU 1
namespace avx2 {
float dot_f32(const float* a, const float* b, std::size_t n);
double dot_f64(const double* a, const double* b, std::size_t n);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);
void fma_f32(const float* x, const float* z, float* y, std::size_t n);
void fma_f64(const double* x, const double* z, double* y, std::size_t n);
}  // namespace avx2
#endif

#if defined(__aarch64__)
#define DCSE_HAVE_NEON_TU 1
namespace neon {
float dot_f32(const float* a, const float* b, std::size_t n);
double dot_f64(const double* a, const double* b, std::size_t n);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);
void fma_f32(const float* x, const float* z, float* y, std::size_t n);
void fma_f64(const double* x, const double* z, double* y, std::size_t n);
}  // namespace neon
#endif

}  // namespace dcse::kernels
