#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "geco/rng.hpp"
#include "geco/simd/kernels.hpp"
#include "test_util.hpp"

using geco::Rng;
using namespace geco::simd;

namespace {

// Naive row-major GEMM used as the ground truth for both layouts.
void naive_gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = acc ? c[i * n + j] : 0.0;
            for (int p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = s;
        }
}

void naive_gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    // a stored as k x m, logical operand is a^T (m x k)
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = acc ? c[i * n + j] : 0.0;
            for (int p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
            c[i * n + j] = s;
        }
}

std::vector<double> random_vec(Rng& rng, int n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

/// Restores the startup ISA when a test body ends.
struct IsaGuard {
    Isa saved;
    IsaGuard() : saved(active_isa()) {}
    ~IsaGuard() { force_isa(saved); }
};

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("scalar table is always available and the active isa is one of the listed ones") {
    auto isas = available_isas();
    REQUIRE(!isas.empty());
    CHECK(isas.front() == Isa::Scalar);
    bool found = false;
    for (Isa i : isas) found = found || i == active_isa();
    CHECK(found);
    CHECK(std::strlen(isa_name(active_isa())) > 0);
}

TEST_CASE("forcing an unavailable isa throws") {
    bool have_neon = false;
    for (Isa i : available_isas()) have_neon = have_neon || i == Isa::Neon;
    if (!have_neon) CHECK_THROWS_AS(force_isa(Isa::Neon), geco::ShapeError);
}

TEST_CASE("gemm_nn matches the naive triple loop on every available isa") {
    IsaGuard guard;
    Rng rng(11);
    for (Isa isa : available_isas()) {
        force_isa(isa);
        for (int trial = 0; trial < 24; ++trial) {
            const int m = rng.uniform_int(1, 17);
            const int k = rng.uniform_int(1, 33);
            const int n = rng.uniform_int(1, 19);
            const bool acc = rng.bernoulli(0.5);
            auto a = random_vec(rng, m * k), b = random_vec(rng, k * n);
            auto c = random_vec(rng, m * n);
            auto ref = c;
            gemm_nn(a.data(), b.data(), c.data(), m, k, n, acc);
            naive_gemm_nn(a.data(), b.data(), ref.data(), m, k, n, acc);
            for (int i = 0; i < m * n; ++i) {
                INFO(isa_name(isa), " m=", m, " k=", k, " n=", n, " elt ", i);
                CHECK(testutil::mixed_err(c[i], ref[i]) < 1e-12);
            }
        }
    }
}

TEST_CASE("gemm_tn matches the naive triple loop on every available isa") {
    IsaGuard guard;
    Rng rng(12);
    for (Isa isa : available_isas()) {
        force_isa(isa);
        for (int trial = 0; trial < 24; ++trial) {
            const int m = rng.uniform_int(1, 17);
            const int k = rng.uniform_int(1, 33);
            const int n = rng.uniform_int(1, 19);
            const bool acc = rng.bernoulli(0.5);
            auto a = random_vec(rng, k * m), b = random_vec(rng, k * n);
            auto c = random_vec(rng, m * n);
            auto ref = c;
            gemm_tn(a.data(), b.data(), c.data(), m, k, n, acc);
            naive_gemm_tn(a.data(), b.data(), ref.data(), m, k, n, acc);
            for (int i = 0; i < m * n; ++i) {
                INFO(isa_name(isa), " m=", m, " k=", k, " n=", n, " elt ", i);
                CHECK(testutil::mixed_err(c[i], ref[i]) < 1e-12);
            }
        }
    }
}

TEST_CASE("elementwise kernels are bit-identical across isas") {
    IsaGuard guard;
    Rng rng(13);
    // Sizes straddle the 4- and 8-lane boundaries to exercise tail handling.
    for (int n : {1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 32, 33, 64, 67}) {
        auto a = random_vec(rng, n), b = random_vec(rng, n);
        const double s = rng.uniform(-2.0, 2.0);

        force_isa(Isa::Scalar);
        std::vector<double> r_add(n), r_sub(n), r_mul(n), r_scale(n), r_lrelu(n);
        std::vector<double> r_axpy = b, r_lgrad = b;
        add(a.data(), b.data(), r_add.data(), n);
        sub(a.data(), b.data(), r_sub.data(), n);
        mul(a.data(), b.data(), r_mul.data(), n);
        scale(a.data(), s, r_scale.data(), n);
        leaky_relu(a.data(), r_lrelu.data(), n, 0.01);
        axpy(s, a.data(), r_axpy.data(), n);
        leaky_relu_grad(a.data(), b.data(), r_lgrad.data(), n, 0.01);

        for (Isa isa : available_isas()) {
            force_isa(isa);
            std::vector<double> o(n);
            add(a.data(), b.data(), o.data(), n);
            CHECK(o == r_add);
            sub(a.data(), b.data(), o.data(), n);
            CHECK(o == r_sub);
            mul(a.data(), b.data(), o.data(), n);
            CHECK(o == r_mul);
            scale(a.data(), s, o.data(), n);
            CHECK(o == r_scale);
            leaky_relu(a.data(), o.data(), n, 0.01);
            CHECK(o == r_lrelu);
            o = b;
            axpy(s, a.data(), o.data(), n);
            CHECK(o == r_axpy);
            o = b;
            leaky_relu_grad(a.data(), b.data(), o.data(), n, 0.01);
            CHECK(o == r_lgrad);
        }
    }
}

TEST_CASE("reductions agree across isas to accumulation-order tolerance") {
    IsaGuard guard;
    Rng rng(14);
    for (int n : {1, 3, 7, 8, 9, 16, 31, 64, 129, 257}) {
        auto a = random_vec(rng, n), b = random_vec(rng, n);
        force_isa(Isa::Scalar);
        const double dot_ref = dot(a.data(), b.data(), n);
        const double sum_ref = reduce_sum(a.data(), n);
        for (Isa isa : available_isas()) {
            force_isa(isa);
            INFO(isa_name(isa), " n=", n);
            CHECK(testutil::mixed_err(dot(a.data(), b.data(), n), dot_ref) < 1e-13);
            CHECK(testutil::mixed_err(reduce_sum(a.data(), n), sum_ref) < 1e-13);
        }
    }
}

TEST_CASE("transcendental kernels agree across isas within polynomial accuracy") {
    IsaGuard guard;
    Rng rng(15);
    for (int n : {1, 5, 8, 13, 16, 40, 67}) {
        auto a = random_vec(rng, n, -30.0, 30.0);
        force_isa(Isa::Scalar);
        std::vector<double> e_ref(n), s_ref(n);
        exp_vec(a.data(), e_ref.data(), n);
        sigmoid(a.data(), s_ref.data(), n);
        auto sm_ref = a;
        softmax_row(sm_ref.data(), n);

        for (Isa isa : available_isas()) {
            force_isa(isa);
            std::vector<double> e(n), s(n);
            exp_vec(a.data(), e.data(), n);
            sigmoid(a.data(), s.data(), n);
            auto sm = a;
            softmax_row(sm.data(), n);
            for (int i = 0; i < n; ++i) {
                INFO(isa_name(isa), " n=", n, " elt ", i);
                CHECK(std::fabs(e[i] - e_ref[i]) <= 1e-13 * std::max(1.0, e_ref[i]));
                CHECK(std::fabs(s[i] - s_ref[i]) < 1e-13);
                CHECK(std::fabs(sm[i] - sm_ref[i]) < 1e-13);
            }
        }
    }
}

TEST_CASE("softmax_row is stable for large inputs and sums to one") {
    IsaGuard guard;
    Rng rng(16);
    for (Isa isa : available_isas()) {
        force_isa(isa);
        std::vector<double> x = {1000.0, 1000.0, 999.0, -1000.0, 500.0};
        softmax_row(x.data(), static_cast<int>(x.size()));
        double sum = 0;
        for (double v : x) {
            CHECK(std::isfinite(v));
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(x[0] == doctest::Approx(x[1]).epsilon(1e-12));
        CHECK(x[3] == doctest::Approx(0.0).epsilon(1e-15));
    }
}

TEST_CASE("exp_vec stays finite across the usable double range") {
    IsaGuard guard;
    std::vector<double> x = {700.0, -800.0, 0.0};
    for (Isa isa : available_isas()) {
        force_isa(isa);
        std::vector<double> o(3);
        exp_vec(x.data(), o.data(), 3);
        CHECK(std::isfinite(o[0]));
        CHECK(o[1] >= 0.0);
        CHECK(o[1] < 1e-300);
        CHECK(o[2] == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("transpose round-trips") {
    Rng rng(17);
    const int m = 5, n = 9;
    auto a = random_vec(rng, m * n);
    std::vector<double> t(m * n), back(m * n);
    transpose(a.data(), t.data(), m, n);
    transpose(t.data(), back.data(), n, m);
    CHECK(back == a);
    CHECK(t[0 * m + 2] == a[2 * n + 0]);
}

}  // TEST_SUITE
