#include "tamtrl/kernels.hpp"
#include "tamtrl/rng.hpp"

#include <cmath>
#include <doctest.h>
#include <string>
#include <vector>

namespace k = tamtrl::kernels;
using tamtrl::Rng;

namespace {

std::vector<double> randvec(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.gaussian(0.0, 1.0);
    return v;
}

// Plain triple loop in long double; independent of the library code paths.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t kk, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            long double acc = 0.0L;
            for (std::size_t t = 0; t < kk; ++t) acc += (long double)a[i * kk + t] * b[t * n + j];
            c[i * n + j] = static_cast<double>(acc);
        }
    return c;
}

struct BackendGuard {
    k::Backend saved = k::active_backend();
    ~BackendGuard() { k::set_backend(saved); }
};

} // namespace

TEST_CASE("matmul matches extended-precision oracle on both backends") {
    BackendGuard guard;
    Rng rng(101);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t m = 1 + rng.uniform_int(17);
        const std::size_t kk = 1 + rng.uniform_int(33);
        const std::size_t n = 1 + rng.uniform_int(29);
        const auto a = randvec(rng, m * kk);
        const auto b = randvec(rng, kk * n);
        const auto want = matmul_oracle(a, b, m, kk, n);
        for (const auto backend : {k::Backend::scalar, k::Backend::avx2}) {
            k::set_backend(backend);
            std::vector<double> c(m * n, -7.0);
            k::matmul(a.data(), b.data(), c.data(), m, kk, n);
            for (std::size_t i = 0; i < c.size(); ++i)
                CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("scalar and avx2 backends agree on every primitive") {
    BackendGuard guard;
    Rng rng(102);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t m = 1 + rng.uniform_int(13);
        const std::size_t kk = 1 + rng.uniform_int(40);
        const std::size_t n = 1 + rng.uniform_int(13);
        const auto a = randvec(rng, m * kk);
        const auto b = randvec(rng, kk * n);
        const auto b_atb = randvec(rng, m * n); // a^T * b needs b as [m x n]
        const auto bt = randvec(rng, n * kk);
        const auto at_init = randvec(rng, kk * n);
        const auto abt_init = randvec(rng, m * n);
        const auto x = randvec(rng, kk);
        const auto y0 = randvec(rng, kk);
        const double alpha = rng.gaussian(0.0, 1.0);

        k::set_backend(k::Backend::scalar);
        const double dot_s = k::dot(a.data(), a.data(), m * kk);
        auto y_s = y0;
        k::axpy(alpha, x.data(), y_s.data(), kk);
        auto sc_s = y0;
        k::scale(sc_s.data(), alpha, kk);
        std::vector<double> acc_s(m * n, 0.5);
        k::matmul_acc(a.data(), b.data(), acc_s.data(), m, kk, n);
        auto atb_s = at_init;
        k::matmul_at_b_acc(a.data(), b_atb.data(), atb_s.data(), m, kk, n);
        auto abt_s = abt_init;
        k::matmul_a_bt_acc(a.data(), bt.data(), abt_s.data(), m, kk, n);
        auto sm_s = x;
        k::softmax_row(sm_s.data(), kk);

        k::set_backend(k::Backend::avx2);
        if (k::active_backend() != k::Backend::avx2) return; // host lacks AVX2
        const double dot_v = k::dot(a.data(), a.data(), m * kk);
        auto y_v = y0;
        k::axpy(alpha, x.data(), y_v.data(), kk);
        auto sc_v = y0;
        k::scale(sc_v.data(), alpha, kk);
        std::vector<double> acc_v(m * n, 0.5);
        k::matmul_acc(a.data(), b.data(), acc_v.data(), m, kk, n);
        auto atb_v = at_init;
        k::matmul_at_b_acc(a.data(), b_atb.data(), atb_v.data(), m, kk, n);
        auto abt_v = abt_init;
        k::matmul_a_bt_acc(a.data(), bt.data(), abt_v.data(), m, kk, n);
        auto sm_v = x;
        k::softmax_row(sm_v.data(), kk);

        CHECK(dot_s == doctest::Approx(dot_v).epsilon(1e-12));
        for (std::size_t i = 0; i < kk; ++i) {
            CHECK(y_s[i] == doctest::Approx(y_v[i]).epsilon(1e-12));
            CHECK(sc_s[i] == doctest::Approx(sc_v[i]).epsilon(1e-12));
            CHECK(sm_s[i] == doctest::Approx(sm_v[i]).epsilon(1e-12));
        }
        for (std::size_t i = 0; i < m * n; ++i) {
            CHECK(acc_s[i] == doctest::Approx(acc_v[i]).epsilon(1e-12));
            CHECK(abt_s[i] == doctest::Approx(abt_v[i]).epsilon(1e-12));
        }
        for (std::size_t i = 0; i < kk * n; ++i)
            CHECK(atb_s[i] == doctest::Approx(atb_v[i]).epsilon(1e-12));
    }
}

TEST_CASE("softmax_row is a distribution and shift-invariant") {
    BackendGuard guard;
    Rng rng(103);
    for (const auto backend : {k::Backend::scalar, k::Backend::avx2}) {
        k::set_backend(backend);
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t n = 1 + rng.uniform_int(50);
            auto x = randvec(rng, n);
            auto shifted = x;
            for (auto& v : shifted) v += 123.0; // large common offset
            auto a = x, b = shifted;
            k::softmax_row(a.data(), n);
            k::softmax_row(b.data(), n);
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                REQUIRE(a[i] > 0.0);
                sum += a[i];
                CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("softmax_row matches exp/logsumexp oracle") {
    Rng rng(104);
    const std::size_t n = 23;
    auto x = randvec(rng, n);
    auto got = x;
    k::softmax_row(got.data(), n);
    long double mx = x[0];
    for (const double v : x) mx = std::max<long double>(mx, v);
    long double z = 0.0L;
    for (const double v : x) z += std::exp((long double)v - mx);
    for (std::size_t i = 0; i < n; ++i) {
        const double want = static_cast<double>(std::exp((long double)x[i] - mx) / z);
        CHECK(got[i] == doctest::Approx(want).epsilon(1e-13));
    }
}

TEST_CASE("backend name is consistent with active backend") {
    BackendGuard guard;
    k::set_backend(k::Backend::scalar);
    CHECK(std::string(k::backend_name()) == "scalar");
}
