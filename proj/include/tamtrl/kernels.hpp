#pragma once

#include <cstddef>

// Data-parallel inner loops used by the policy network. Every operation has a
// scalar reference implementation and an AVX2+FMA variant; the active variant
// is chosen once at startup from cpuid and can be overridden for equivalence
// testing. All matrices are row-major, double precision.
namespace tamtrl::kernels {

enum class Backend { scalar, avx2 };

Backend active_backend();

// Force a backend (tests only). Backend::avx2 is ignored when the CPU lacks
// the required features.
void set_backend(Backend b);

const char* backend_name();

// sum_i a[i] * b[i]
double dot(const double* a, const double* b, std::size_t n);

// y[i] += alpha * x[i]
void axpy(double alpha, const double* x, double* y, std::size_t n);

// x[i] *= alpha
void scale(double* x, double alpha, std::size_t n);

// c[m x n] = a[m x k] * b[k x n]   (c overwritten)
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n);

// c[m x n] += a[m x k] * b[k x n]
void matmul_acc(const double* a, const double* b, double* c,
                std::size_t m, std::size_t k, std::size_t n);

// c[k x n] += a^T[k x m] * b[m x n]  with a stored as [m x k]
void matmul_at_b_acc(const double* a, const double* b, double* c,
                     std::size_t m, std::size_t k, std::size_t n);

// c[m x n] += a[m x k] * b^T[k x n]  with b stored as [n x k]
void matmul_a_bt_acc(const double* a, const double* b, double* c,
                     std::size_t m, std::size_t k, std::size_t n);

// In-place softmax over a row of n logits (max-subtracted, numerically safe).
void softmax_row(double* x, std::size_t n);

} // namespace tamtrl::kernels
