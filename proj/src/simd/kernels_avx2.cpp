// AVX2+FMA kernels. The GEMM microkernel accumulates a 4-row by 8-column
// block of C in registers and streams B row slabs through it, which is
// enough to keep a single core near its FMA throughput for the matrix
// shapes this project produces (k in the tens to hundreds, n a multiple of
// a few vectors). exp follows the classic Cephes range-reduction + rational
// polynomial scheme so softmax over large attention maps does not bottleneck
// on libm.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "kernel_table.hpp"

namespace geco::simd {
namespace {

// ---------------------------------------------------------------------------
// GEMM

// C block is 4 rows x 2 vectors (8 columns).
inline void kernel_4x8(const double* a, const double* b, double* c, int k, int lda_a,
                       int astride, int n, bool acc) {
    __m256d c00, c01, c10, c11, c20, c21, c30, c31;
    if (acc) {
        c00 = _mm256_loadu_pd(c + 0 * n);
        c01 = _mm256_loadu_pd(c + 0 * n + 4);
        c10 = _mm256_loadu_pd(c + 1 * n);
        c11 = _mm256_loadu_pd(c + 1 * n + 4);
        c20 = _mm256_loadu_pd(c + 2 * n);
        c21 = _mm256_loadu_pd(c + 2 * n + 4);
        c30 = _mm256_loadu_pd(c + 3 * n);
        c31 = _mm256_loadu_pd(c + 3 * n + 4);
    } else {
        c00 = c01 = c10 = c11 = c20 = c21 = c30 = c31 = _mm256_setzero_pd();
    }
    for (int p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + static_cast<size_t>(p) * n);
        const __m256d b1 = _mm256_loadu_pd(b + static_cast<size_t>(p) * n + 4);
        const __m256d a0 = _mm256_set1_pd(a[0 * lda_a + p * astride]);
        const __m256d a1 = _mm256_set1_pd(a[1 * lda_a + p * astride]);
        const __m256d a2 = _mm256_set1_pd(a[2 * lda_a + p * astride]);
        const __m256d a3 = _mm256_set1_pd(a[3 * lda_a + p * astride]);
        c00 = _mm256_fmadd_pd(a0, b0, c00);
        c01 = _mm256_fmadd_pd(a0, b1, c01);
        c10 = _mm256_fmadd_pd(a1, b0, c10);
        c11 = _mm256_fmadd_pd(a1, b1, c11);
        c20 = _mm256_fmadd_pd(a2, b0, c20);
        c21 = _mm256_fmadd_pd(a2, b1, c21);
        c30 = _mm256_fmadd_pd(a3, b0, c30);
        c31 = _mm256_fmadd_pd(a3, b1, c31);
    }
    _mm256_storeu_pd(c + 0 * n, c00);
    _mm256_storeu_pd(c + 0 * n + 4, c01);
    _mm256_storeu_pd(c + 1 * n, c10);
    _mm256_storeu_pd(c + 1 * n + 4, c11);
    _mm256_storeu_pd(c + 2 * n, c20);
    _mm256_storeu_pd(c + 2 * n + 4, c21);
    _mm256_storeu_pd(c + 3 * n, c30);
    _mm256_storeu_pd(c + 3 * n + 4, c31);
}

// One row of C, 8 columns.
inline void kernel_1x8(const double* a, const double* b, double* c, int k, int astride,
                       int n, bool acc) {
    __m256d c0, c1;
    if (acc) {
        c0 = _mm256_loadu_pd(c);
        c1 = _mm256_loadu_pd(c + 4);
    } else {
        c0 = c1 = _mm256_setzero_pd();
    }
    for (int p = 0; p < k; ++p) {
        const __m256d av = _mm256_set1_pd(a[p * astride]);
        c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + static_cast<size_t>(p) * n), c0);
        c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + static_cast<size_t>(p) * n + 4), c1);
    }
    _mm256_storeu_pd(c, c0);
    _mm256_storeu_pd(c + 4, c1);
}

// Column remainder: plain scalar over `jn` trailing columns.
inline void kernel_tail(const double* a, const double* b, double* c, int rows, int k,
                        int lda_a, int astride, int n, int j0, int jn, bool acc) {
    for (int i = 0; i < rows; ++i) {
        for (int j = j0; j < j0 + jn; ++j) {
            double s = acc ? c[static_cast<size_t>(i) * n + j] : 0.0;
            for (int p = 0; p < k; ++p)
                s += a[i * lda_a + p * astride] * b[static_cast<size_t>(p) * n + j];
            c[static_cast<size_t>(i) * n + j] = s;
        }
    }
}

// Shared driver: `lda_a`/`astride` describe how A is walked, so the same
// code serves both the NN (A row-major, stride 1 across k) and TN
// (A stored k x m, stride m across k) layouts.
void gemm_driver(const double* a, const double* b, double* c, int m, int k, int n,
                 int lda_a, int astride, bool acc) {
    const int n8 = n & ~7;
    int i = 0;
    for (; i + 4 <= m; i += 4) {
        const double* ai = a + static_cast<size_t>(i) * lda_a;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n8; j += 8) kernel_4x8(ai, b + j, ci + j, k, lda_a, astride, n, acc);
        if (n8 < n) kernel_tail(ai, b, ci, 4, k, lda_a, astride, n, n8, n - n8, acc);
    }
    for (; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * lda_a;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n8; j += 8) kernel_1x8(ai + 0, b + j, ci + j, k, astride, n, acc);
        if (n8 < n) kernel_tail(ai, b, ci, 1, k, lda_a, astride, n, n8, n - n8, acc);
    }
}

void v_gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    gemm_driver(a, b, c, m, k, n, /*lda_a=*/k, /*astride=*/1, acc);
}

void v_gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    // A is stored [k x m]; row i of the logical A^T walks column i with
    // stride m.
    gemm_driver(a, b, c, m, k, n, /*lda_a=*/1, /*astride=*/m, acc);
}

// ---------------------------------------------------------------------------
// exp

// Coefficients from Cephes exp(x), rational approximation on
// [-0.5 ln 2, 0.5 ln 2].
constexpr double kExpP0 = 1.26177193074810590878e-4;
constexpr double kExpP1 = 3.02994407707441961300e-2;
constexpr double kExpP2 = 9.99999999999999999910e-1;
constexpr double kExpQ0 = 3.00198505138664455042e-6;
constexpr double kExpQ1 = 2.52448340349684104192e-3;
constexpr double kExpQ2 = 2.27265548208155028766e-1;
constexpr double kExpQ3 = 2.00000000000000000005e0;
constexpr double kLog2E = 1.4426950408889634074;
constexpr double kLn2Hi = 6.93145751953125e-1;
constexpr double kLn2Lo = 1.42860682030941723212e-6;
// Outside this range exp(x) overflows / is a hard zero in double.
constexpr double kExpMax = 709.0;
constexpr double kExpMin = -745.0;

inline __m256d exp_pd(__m256d x) {
    const __m256d zero_mask = _mm256_cmp_pd(x, _mm256_set1_pd(kExpMin), _CMP_LT_OQ);
    x = _mm256_min_pd(x, _mm256_set1_pd(kExpMax));
    x = _mm256_max_pd(x, _mm256_set1_pd(kExpMin));

    // n = round(x / ln 2); reduce with the split constant to keep px exact.
    const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(kLog2E)),
                                      _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256d px = _mm256_fnmadd_pd(n, _mm256_set1_pd(kLn2Hi), x);
    px = _mm256_fnmadd_pd(n, _mm256_set1_pd(kLn2Lo), px);

    const __m256d xx = _mm256_mul_pd(px, px);
    __m256d p = _mm256_fmadd_pd(_mm256_set1_pd(kExpP0), xx, _mm256_set1_pd(kExpP1));
    p = _mm256_fmadd_pd(p, xx, _mm256_set1_pd(kExpP2));
    p = _mm256_mul_pd(p, px);
    __m256d q = _mm256_fmadd_pd(_mm256_set1_pd(kExpQ0), xx, _mm256_set1_pd(kExpQ1));
    q = _mm256_fmadd_pd(q, xx, _mm256_set1_pd(kExpQ2));
    q = _mm256_fmadd_pd(q, xx, _mm256_set1_pd(kExpQ3));
    const __m256d e = _mm256_div_pd(p, _mm256_sub_pd(q, p));
    __m256d y = _mm256_fmadd_pd(_mm256_set1_pd(2.0), e, _mm256_set1_pd(1.0));

    // Scale by 2^n in two halves so subnormal results stay representable.
    // na = floor(n / 2) computed via a bias so the logical shift acts as an
    // arithmetic one (|n| <= 1075 here).
    const __m128i n32 = _mm256_cvtpd_epi32(n);
    const __m256i n64 = _mm256_cvtepi32_epi64(n32);
    const __m256i nshift = _mm256_srli_epi64(_mm256_add_epi64(n64, _mm256_set1_epi64x(2048)), 1);
    const __m256i na = _mm256_sub_epi64(nshift, _mm256_set1_epi64x(1024));
    const __m256i nb = _mm256_sub_epi64(n64, na);
    const __m256i bias = _mm256_set1_epi64x(1023);
    const __m256d pa = _mm256_castsi256_pd(_mm256_slli_epi64(_mm256_add_epi64(na, bias), 52));
    const __m256d pb = _mm256_castsi256_pd(_mm256_slli_epi64(_mm256_add_epi64(nb, bias), 52));
    y = _mm256_mul_pd(_mm256_mul_pd(y, pa), pb);
    return _mm256_andnot_pd(zero_mask, y);
}

void v_exp_vec(const double* x, double* out, int n) {
    int i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, exp_pd(_mm256_loadu_pd(x + i)));
    for (; i < n; ++i) out[i] = std::exp(x[i]);
}

void v_sigmoid(const double* x, double* out, int n) {
    const __m256d one = _mm256_set1_pd(1.0);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d e = exp_pd(_mm256_sub_pd(_mm256_setzero_pd(), _mm256_loadu_pd(x + i)));
        _mm256_storeu_pd(out + i, _mm256_div_pd(one, _mm256_add_pd(one, e)));
    }
    for (; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void v_softmax_row(double* x, int n) {
    __m256d vmax = _mm256_set1_pd(-HUGE_VAL);
    int i = 0;
    for (; i + 4 <= n; i += 4) vmax = _mm256_max_pd(vmax, _mm256_loadu_pd(x + i));
    double mx = std::max(std::max(vmax[0], vmax[1]), std::max(vmax[2], vmax[3]));
    for (; i < n; ++i) mx = std::max(mx, x[i]);

    const __m256d vmx = _mm256_set1_pd(mx);
    __m256d vsum = _mm256_setzero_pd();
    double tail_sum = 0.0;
    i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d e = exp_pd(_mm256_sub_pd(_mm256_loadu_pd(x + i), vmx));
        _mm256_storeu_pd(x + i, e);
        vsum = _mm256_add_pd(vsum, e);
    }
    for (; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        tail_sum += x[i];
    }
    const double sum = vsum[0] + vsum[1] + vsum[2] + vsum[3] + tail_sum;
    const __m256d vinv = _mm256_set1_pd(1.0 / sum);
    i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), vinv));
    for (; i < n; ++i) x[i] *= 1.0 / sum;
}

// ---------------------------------------------------------------------------
// Elementwise

double v_dot(const double* a, const double* b, int n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    const __m256d acc = _mm256_add_pd(acc0, acc1);
    double s = acc[0] + acc[1] + acc[2] + acc[3];
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void v_axpy(double alpha, const double* x, double* y, int n) {
    const __m256d va = _mm256_set1_pd(alpha);
    int i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void v_add(const double* a, const double* b, double* out, int n) {
    int i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_sub(const double* a, const double* b, double* out, int n) {
    int i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void v_mul(const double* a, const double* b, double* out, int n) {
    int i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_scale(const double* x, double s, double* out, int n) {
    const __m256d vs = _mm256_set1_pd(s);
    int i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(vs, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) out[i] = s * x[i];
}

void v_leaky_relu(const double* x, double* out, int n, double slope) {
    const __m256d vs = _mm256_set1_pd(slope);
    const __m256d zero = _mm256_setzero_pd();
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_loadu_pd(x + i);
        const __m256d neg = _mm256_mul_pd(vs, v);
        _mm256_storeu_pd(out + i, _mm256_blendv_pd(neg, v, _mm256_cmp_pd(v, zero, _CMP_GT_OQ)));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void v_leaky_relu_grad(const double* x, const double* dy, double* dx, int n, double slope) {
    const __m256d vs = _mm256_set1_pd(slope);
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d zero = _mm256_setzero_pd();
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_loadu_pd(x + i);
        const __m256d g = _mm256_blendv_pd(vs, one, _mm256_cmp_pd(v, zero, _CMP_GT_OQ));
        _mm256_storeu_pd(dx + i,
                         _mm256_fmadd_pd(g, _mm256_loadu_pd(dy + i), _mm256_loadu_pd(dx + i)));
    }
    for (; i < n; ++i) dx[i] = std::fma(x[i] > 0.0 ? 1.0 : slope, dy[i], dx[i]);
}

double v_reduce_sum(const double* x, int n) {
    __m256d acc = _mm256_setzero_pd();
    int i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = acc[0] + acc[1] + acc[2] + acc[3];
    for (; i < n; ++i) s += x[i];
    return s;
}

}  // namespace

KernelTable avx2_table() {
    KernelTable t;
    t.gemm_nn = v_gemm_nn;
    t.gemm_tn = v_gemm_tn;
    t.dot = v_dot;
    t.axpy = v_axpy;
    t.add = v_add;
    t.sub = v_sub;
    t.mul = v_mul;
    t.scale = v_scale;
    t.leaky_relu = v_leaky_relu;
    t.leaky_relu_grad = v_leaky_relu_grad;
    t.exp_vec = v_exp_vec;
    t.sigmoid = v_sigmoid;
    t.softmax_row = v_softmax_row;
    t.reduce_sum = v_reduce_sum;
    return t;
}

}  // namespace geco::simd

#endif  // x86_64
