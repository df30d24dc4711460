// AVX-512 kernels (F + DQ). Same structure as the AVX2 set but with 8-wide
// vectors and mask registers, which remove every scalar remainder loop: the
// last partial vector of a row is handled by the same code path with a
// narrower mask.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>
#include <cstring>

#include "kernel_table.hpp"

namespace geco::simd {
namespace {

inline __mmask8 tail_mask(int remaining) {
    if (remaining >= 8) return static_cast<__mmask8>(0xFF);
    if (remaining <= 0) return 0;
    return static_cast<__mmask8>((1u << remaining) - 1u);
}

// ---------------------------------------------------------------------------
// GEMM

// 4 rows x up to 16 columns of C kept in registers; column edges are masked.
inline void kernel_4x16(const double* a, const double* b, double* c, int k, int lda_a,
                        int astride, int n, __mmask8 m0, __mmask8 m1, bool acc) {
    __m512d c00, c01, c10, c11, c20, c21, c30, c31;
    if (acc) {
        c00 = _mm512_maskz_loadu_pd(m0, c + 0 * n);
        c01 = _mm512_maskz_loadu_pd(m1, c + 0 * n + 8);
        c10 = _mm512_maskz_loadu_pd(m0, c + 1 * n);
        c11 = _mm512_maskz_loadu_pd(m1, c + 1 * n + 8);
        c20 = _mm512_maskz_loadu_pd(m0, c + 2 * n);
        c21 = _mm512_maskz_loadu_pd(m1, c + 2 * n + 8);
        c30 = _mm512_maskz_loadu_pd(m0, c + 3 * n);
        c31 = _mm512_maskz_loadu_pd(m1, c + 3 * n + 8);
    } else {
        c00 = c01 = c10 = c11 = c20 = c21 = c30 = c31 = _mm512_setzero_pd();
    }
    for (int p = 0; p < k; ++p) {
        const double* bp = b + static_cast<size_t>(p) * n;
        const __m512d b0 = _mm512_maskz_loadu_pd(m0, bp);
        const __m512d b1 = _mm512_maskz_loadu_pd(m1, bp + 8);
        const __m512d a0 = _mm512_set1_pd(a[0 * lda_a + p * astride]);
        const __m512d a1 = _mm512_set1_pd(a[1 * lda_a + p * astride]);
        const __m512d a2 = _mm512_set1_pd(a[2 * lda_a + p * astride]);
        const __m512d a3 = _mm512_set1_pd(a[3 * lda_a + p * astride]);
        c00 = _mm512_fmadd_pd(a0, b0, c00);
        c01 = _mm512_fmadd_pd(a0, b1, c01);
        c10 = _mm512_fmadd_pd(a1, b0, c10);
        c11 = _mm512_fmadd_pd(a1, b1, c11);
        c20 = _mm512_fmadd_pd(a2, b0, c20);
        c21 = _mm512_fmadd_pd(a2, b1, c21);
        c30 = _mm512_fmadd_pd(a3, b0, c30);
        c31 = _mm512_fmadd_pd(a3, b1, c31);
    }
    _mm512_mask_storeu_pd(c + 0 * n, m0, c00);
    _mm512_mask_storeu_pd(c + 0 * n + 8, m1, c01);
    _mm512_mask_storeu_pd(c + 1 * n, m0, c10);
    _mm512_mask_storeu_pd(c + 1 * n + 8, m1, c11);
    _mm512_mask_storeu_pd(c + 2 * n, m0, c20);
    _mm512_mask_storeu_pd(c + 2 * n + 8, m1, c21);
    _mm512_mask_storeu_pd(c + 3 * n, m0, c30);
    _mm512_mask_storeu_pd(c + 3 * n + 8, m1, c31);
}

inline void kernel_1x16(const double* a, const double* b, double* c, int k, int astride,
                        int n, __mmask8 m0, __mmask8 m1, bool acc) {
    __m512d c0 = acc ? _mm512_maskz_loadu_pd(m0, c) : _mm512_setzero_pd();
    __m512d c1 = acc ? _mm512_maskz_loadu_pd(m1, c + 8) : _mm512_setzero_pd();
    for (int p = 0; p < k; ++p) {
        const double* bp = b + static_cast<size_t>(p) * n;
        const __m512d av = _mm512_set1_pd(a[p * astride]);
        c0 = _mm512_fmadd_pd(av, _mm512_maskz_loadu_pd(m0, bp), c0);
        c1 = _mm512_fmadd_pd(av, _mm512_maskz_loadu_pd(m1, bp + 8), c1);
    }
    _mm512_mask_storeu_pd(c, m0, c0);
    _mm512_mask_storeu_pd(c + 8, m1, c1);
}

void gemm_driver(const double* a, const double* b, double* c, int m, int k, int n,
                 int lda_a, int astride, bool acc) {
    int i = 0;
    for (; i + 4 <= m; i += 4) {
        const double* ai = a + static_cast<size_t>(i) * lda_a;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; j += 16) {
            const int jn = n - j;
            kernel_4x16(ai, b + j, ci + j, k, lda_a, astride, n, tail_mask(jn),
                        tail_mask(jn - 8), acc);
        }
    }
    for (; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * lda_a;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; j += 16) {
            const int jn = n - j;
            kernel_1x16(ai, b + j, ci + j, k, astride, n, tail_mask(jn), tail_mask(jn - 8), acc);
        }
    }
}

void v_gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    gemm_driver(a, b, c, m, k, n, k, 1, acc);
}

void v_gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    gemm_driver(a, b, c, m, k, n, 1, m, acc);
}

// ---------------------------------------------------------------------------
// exp (same Cephes scheme as the AVX2 unit, 8 lanes at a time)

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
constexpr double kExpMax = 709.0;
constexpr double kExpMin = -745.0;

inline __m512d exp_pd(__m512d x) {
    const __mmask8 zero_mask = _mm512_cmp_pd_mask(x, _mm512_set1_pd(kExpMin), _CMP_LT_OQ);
    x = _mm512_min_pd(x, _mm512_set1_pd(kExpMax));
    x = _mm512_max_pd(x, _mm512_set1_pd(kExpMin));

    const __m512d n = _mm512_roundscale_pd(_mm512_mul_pd(x, _mm512_set1_pd(kLog2E)),
                                           _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m512d px = _mm512_fnmadd_pd(n, _mm512_set1_pd(kLn2Hi), x);
    px = _mm512_fnmadd_pd(n, _mm512_set1_pd(kLn2Lo), px);

    const __m512d xx = _mm512_mul_pd(px, px);
    __m512d p = _mm512_fmadd_pd(_mm512_set1_pd(kExpP0), xx, _mm512_set1_pd(kExpP1));
    p = _mm512_fmadd_pd(p, xx, _mm512_set1_pd(kExpP2));
    p = _mm512_mul_pd(p, px);
    __m512d q = _mm512_fmadd_pd(_mm512_set1_pd(kExpQ0), xx, _mm512_set1_pd(kExpQ1));
    q = _mm512_fmadd_pd(q, xx, _mm512_set1_pd(kExpQ2));
    q = _mm512_fmadd_pd(q, xx, _mm512_set1_pd(kExpQ3));
    const __m512d e = _mm512_div_pd(p, _mm512_sub_pd(q, p));
    __m512d y = _mm512_fmadd_pd(_mm512_set1_pd(2.0), e, _mm512_set1_pd(1.0));

    const __m512i n64 = _mm512_cvtpd_epi64(n);
    const __m512i na = _mm512_srai_epi64(n64, 1);
    const __m512i nb = _mm512_sub_epi64(n64, na);
    const __m512i bias = _mm512_set1_epi64(1023);
    const __m512d pa = _mm512_castsi512_pd(_mm512_slli_epi64(_mm512_add_epi64(na, bias), 52));
    const __m512d pb = _mm512_castsi512_pd(_mm512_slli_epi64(_mm512_add_epi64(nb, bias), 52));
    y = _mm512_mul_pd(_mm512_mul_pd(y, pa), pb);
    return _mm512_maskz_mov_pd(~zero_mask, y);
}

void v_exp_vec(const double* x, double* out, int n) {
    for (int i = 0; i < n; i += 8) {
        const __mmask8 m = tail_mask(n - i);
        _mm512_mask_storeu_pd(out + i, m, exp_pd(_mm512_maskz_loadu_pd(m, x + i)));
    }
}

void v_sigmoid(const double* x, double* out, int n) {
    const __m512d one = _mm512_set1_pd(1.0);
    for (int i = 0; i < n; i += 8) {
        const __mmask8 m = tail_mask(n - i);
        const __m512d v = _mm512_maskz_loadu_pd(m, x + i);
        const __m512d e = exp_pd(_mm512_sub_pd(_mm512_setzero_pd(), v));
        _mm512_mask_storeu_pd(out + i, m, _mm512_div_pd(one, _mm512_add_pd(one, e)));
    }
}

void v_softmax_row(double* x, int n) {
    __m512d vmax = _mm512_set1_pd(-HUGE_VAL);
    for (int i = 0; i < n; i += 8) {
        const __mmask8 m = tail_mask(n - i);
        vmax = _mm512_mask_max_pd(vmax, m, vmax, _mm512_maskz_loadu_pd(m, x + i));
    }
    const double mx = _mm512_reduce_max_pd(vmax);

    const __m512d vmx = _mm512_set1_pd(mx);
    __m512d vsum = _mm512_setzero_pd();
    for (int i = 0; i < n; i += 8) {
        const __mmask8 m = tail_mask(n - i);
        const __m512d e = exp_pd(_mm512_sub_pd(_mm512_maskz_loadu_pd(m, x + i), vmx));
        _mm512_mask_storeu_pd(x + i, m, e);
        vsum = _mm512_mask_add_pd(vsum, m, vsum, e);
    }
    const __m512d vinv = _mm512_set1_pd(1.0 / _mm512_reduce_add_pd(vsum));
    for (int i = 0; i < n; i += 8) {
        const __mmask8 m = tail_mask(n - i);
        _mm512_mask_storeu_pd(x + i, m, _mm512_mul_pd(_mm512_maskz_loadu_pd(m, x + i), vinv));
    }
}

// ---------------------------------------------------------------------------
// Elementwise

double v_dot(const double* a, const double* b, int n) {
    __m512d acc0 = _mm512_setzero_pd();
    __m512d acc1 = _mm512_setzero_pd();
    int i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm512_fmadd_pd(_mm512_loadu_pd(a + i), _mm512_loadu_pd(b + i), acc0);
        acc1 = _mm512_fmadd_pd(_mm512_loadu_pd(a + i + 8), _mm512_loadu_pd(b + i + 8), acc1);
    }
    for (; i < n; i += 8) {
        const __mmask8 m = tail_mask(n - i);
        acc0 = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(m, a + i), _mm512_maskz_loadu_pd(m, b + i),
                               acc0);
    }
    return _mm512_reduce_add_pd(_mm512_add_pd(acc0, acc1));
}

void v_axpy(double alpha, const double* x, double* y, int n) {
    const __m512d va = _mm512_set1_pd(alpha);
    for (int i = 0; i < n; i += 8) {
        const __mmask8 m = tail_mask(n - i);
        _mm512_mask_storeu_pd(
            y + i, m,
            _mm512_fmadd_pd(va, _mm512_maskz_loadu_pd(m, x + i), _mm512_maskz_loadu_pd(m, y + i)));
    }
}

void v_add(const double* a, const double* b, double* out, int n) {
    for (int i = 0; i < n; i += 8) {
        const __mmask8 m = tail_mask(n - i);
        _mm512_mask_storeu_pd(
            out + i, m,
            _mm512_add_pd(_mm512_maskz_loadu_pd(m, a + i), _mm512_maskz_loadu_pd(m, b + i)));
    }
}

void v_sub(const double* a, const double* b, double* out, int n) {
    for (int i = 0; i < n; i += 8) {
        const __mmask8 m = tail_mask(n - i);
        _mm512_mask_storeu_pd(
            out + i, m,
            _mm512_sub_pd(_mm512_maskz_loadu_pd(m, a + i), _mm512_maskz_loadu_pd(m, b + i)));
    }
}

void v_mul(const double* a, const double* b, double* out, int n) {
    for (int i = 0; i < n; i += 8) {
        const __mmask8 m = tail_mask(n - i);
        _mm512_mask_storeu_pd(
            out + i, m,
            _mm512_mul_pd(_mm512_maskz_loadu_pd(m, a + i), _mm512_maskz_loadu_pd(m, b + i)));
    }
}

void v_scale(const double* x, double s, double* out, int n) {
    const __m512d vs = _mm512_set1_pd(s);
    for (int i = 0; i < n; i += 8) {
        const __mmask8 m = tail_mask(n - i);
        _mm512_mask_storeu_pd(out + i, m, _mm512_mul_pd(vs, _mm512_maskz_loadu_pd(m, x + i)));
    }
}

void v_leaky_relu(const double* x, double* out, int n, double slope) {
    const __m512d vs = _mm512_set1_pd(slope);
    const __m512d zero = _mm512_setzero_pd();
    for (int i = 0; i < n; i += 8) {
        const __mmask8 m = tail_mask(n - i);
        const __m512d v = _mm512_maskz_loadu_pd(m, x + i);
        const __mmask8 pos = _mm512_cmp_pd_mask(v, zero, _CMP_GT_OQ);
        _mm512_mask_storeu_pd(out + i, m, _mm512_mask_mov_pd(_mm512_mul_pd(vs, v), pos, v));
    }
}

void v_leaky_relu_grad(const double* x, const double* dy, double* dx, int n, double slope) {
    const __m512d vs = _mm512_set1_pd(slope);
    const __m512d one = _mm512_set1_pd(1.0);
    const __m512d zero = _mm512_setzero_pd();
    for (int i = 0; i < n; i += 8) {
        const __mmask8 m = tail_mask(n - i);
        const __m512d v = _mm512_maskz_loadu_pd(m, x + i);
        const __mmask8 pos = _mm512_cmp_pd_mask(v, zero, _CMP_GT_OQ);
        const __m512d g = _mm512_mask_mov_pd(vs, pos, one);
        _mm512_mask_storeu_pd(dx + i, m,
                              _mm512_fmadd_pd(g, _mm512_maskz_loadu_pd(m, dy + i),
                                              _mm512_maskz_loadu_pd(m, dx + i)));
    }
}

double v_reduce_sum(const double* x, int n) {
    __m512d acc = _mm512_setzero_pd();
    for (int i = 0; i < n; i += 8) {
        const __mmask8 m = tail_mask(n - i);
        acc = _mm512_mask_add_pd(acc, m, acc, _mm512_maskz_loadu_pd(m, x + i));
    }
    return _mm512_reduce_add_pd(acc);
}

}  // namespace

KernelTable avx512_table() {
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
