#include "tamtrl/kernels.hpp"

#include <cmath>

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>
#define TAMTRL_HAVE_AVX2_BUILD 1
#endif

namespace tamtrl::kernels {

namespace {

// ---------------------------------------------------------------- scalar ---

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_scalar(double* x, double alpha, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void matmul_acc_scalar(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double ap = arow[p];
            if (ap == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += ap * brow[j];
        }
    }
}

void matmul_at_b_acc_scalar(const double* a, const double* b, double* c,
                            std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double ap = arow[p];
            if (ap == 0.0) continue;
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += ap * brow[j];
        }
    }
}

void matmul_a_bt_acc_scalar(const double* a, const double* b, double* c,
                            std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += dot_scalar(arow, b + j * k, k);
    }
}

// ------------------------------------------------------------------ avx2 ---

#ifdef TAMTRL_HAVE_AVX2_BUILD

__attribute__((target("avx2,fma")))
double hsum256(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d shuf = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

__attribute__((target("avx2,fma")))
double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    }
    double s = hsum256(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

__attribute__((target("avx2,fma")))
void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

__attribute__((target("avx2,fma")))
void scale_avx2(double* x, double alpha, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) x[i] *= alpha;
}

__attribute__((target("avx2,fma")))
void matmul_acc_avx2(const double* a, const double* b, double* c,
                     std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        std::size_t p = 0;
        // two rows of b per pass keeps the c row hot
        for (; p + 2 <= k; p += 2) {
            const __m256d a0 = _mm256_set1_pd(arow[p]);
            const __m256d a1 = _mm256_set1_pd(arow[p + 1]);
            const double* b0 = b + p * n;
            const double* b1 = b0 + n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d vc = _mm256_loadu_pd(crow + j);
                vc = _mm256_fmadd_pd(a0, _mm256_loadu_pd(b0 + j), vc);
                vc = _mm256_fmadd_pd(a1, _mm256_loadu_pd(b1 + j), vc);
                _mm256_storeu_pd(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += arow[p] * b0[j] + arow[p + 1] * b1[j];
        }
        for (; p < k; ++p) {
            const __m256d a0 = _mm256_set1_pd(arow[p]);
            const double* b0 = b + p * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d vc = _mm256_loadu_pd(crow + j);
                vc = _mm256_fmadd_pd(a0, _mm256_loadu_pd(b0 + j), vc);
                _mm256_storeu_pd(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += arow[p] * b0[j];
        }
    }
}

__attribute__((target("avx2,fma")))
void matmul_at_b_acc_avx2(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            if (arow[p] == 0.0) continue;
            axpy_avx2(arow[p], brow, c + p * n, n);
        }
    }
}

__attribute__((target("avx2,fma")))
void matmul_a_bt_acc_avx2(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += dot_avx2(arow, b + j * k, k);
    }
}

bool cpu_has_avx2_fma() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

#else

bool cpu_has_avx2_fma() { return false; }

#endif // TAMTRL_HAVE_AVX2_BUILD

Backend g_backend = cpu_has_avx2_fma() ? Backend::avx2 : Backend::scalar;

} // namespace

Backend active_backend() { return g_backend; }

void set_backend(Backend b) {
    if (b == Backend::avx2 && !cpu_has_avx2_fma()) return;
    g_backend = b;
}

const char* backend_name() {
    return g_backend == Backend::avx2 ? "avx2" : "scalar";
}

double dot(const double* a, const double* b, std::size_t n) {
#ifdef TAMTRL_HAVE_AVX2_BUILD
    if (g_backend == Backend::avx2) return dot_avx2(a, b, n);
#endif
    return dot_scalar(a, b, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
#ifdef TAMTRL_HAVE_AVX2_BUILD
    if (g_backend == Backend::avx2) { axpy_avx2(alpha, x, y, n); return; }
#endif
    axpy_scalar(alpha, x, y, n);
}

void scale(double* x, double alpha, std::size_t n) {
#ifdef TAMTRL_HAVE_AVX2_BUILD
    if (g_backend == Backend::avx2) { scale_avx2(x, alpha, n); return; }
#endif
    scale_scalar(x, alpha, n);
}

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
    matmul_acc(a, b, c, m, k, n);
}

void matmul_acc(const double* a, const double* b, double* c,
                std::size_t m, std::size_t k, std::size_t n) {
#ifdef TAMTRL_HAVE_AVX2_BUILD
    if (g_backend == Backend::avx2) { matmul_acc_avx2(a, b, c, m, k, n); return; }
#endif
    matmul_acc_scalar(a, b, c, m, k, n);
}

void matmul_at_b_acc(const double* a, const double* b, double* c,
                     std::size_t m, std::size_t k, std::size_t n) {
#ifdef TAMTRL_HAVE_AVX2_BUILD
    if (g_backend == Backend::avx2) { matmul_at_b_acc_avx2(a, b, c, m, k, n); return; }
#endif
    matmul_at_b_acc_scalar(a, b, c, m, k, n);
}

void matmul_a_bt_acc(const double* a, const double* b, double* c,
                     std::size_t m, std::size_t k, std::size_t n) {
#ifdef TAMTRL_HAVE_AVX2_BUILD
    if (g_backend == Backend::avx2) { matmul_a_bt_acc_avx2(a, b, c, m, k, n); return; }
#endif
    matmul_a_bt_acc_scalar(a, b, c, m, k, n);
}

void softmax_row(double* x, std::size_t n) {
    double mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = x[i] > mx ? x[i] : mx;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        sum += x[i];
    }
    const double inv = 1.0 / sum;
    for (std::size_t i = 0; i < n; ++i) x[i] *= inv;
}

} // namespace tamtrl::kernels
