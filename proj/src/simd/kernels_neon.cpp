// NEON kernels for aarch64. Doubles are only 2 to a vector here, so the GEMM
// block is 4 rows x 2 vectors (4 columns). Transcendentals are left to the
// scalar table (null entries fall back there) rather than carrying a second
// polynomial implementation.

#if defined(__aarch64__)

#include <arm_neon.h>

#include <cmath>
#include <cstring>

#include "kernel_table.hpp"

namespace geco::simd {
namespace {

inline void kernel_4x4(const double* a, const double* b, double* c, int k, int lda_a,
                       int astride, int n, bool acc) {
    float64x2_t c00, c01, c10, c11, c20, c21, c30, c31;
    if (acc) {
        c00 = vld1q_f64(c + 0 * n);
        c01 = vld1q_f64(c + 0 * n + 2);
        c10 = vld1q_f64(c + 1 * n);
        c11 = vld1q_f64(c + 1 * n + 2);
        c20 = vld1q_f64(c + 2 * n);
        c21 = vld1q_f64(c + 2 * n + 2);
        c30 = vld1q_f64(c + 3 * n);
        c31 = vld1q_f64(c + 3 * n + 2);
    } else {
        c00 = c01 = c10 = c11 = c20 = c21 = c30 = c31 = vdupq_n_f64(0.0);
    }
    for (int p = 0; p < k; ++p) {
        const double* bp = b + static_cast<size_t>(p) * n;
        const float64x2_t b0 = vld1q_f64(bp);
        const float64x2_t b1 = vld1q_f64(bp + 2);
        const float64x2_t a0 = vdupq_n_f64(a[0 * lda_a + p * astride]);
        const float64x2_t a1 = vdupq_n_f64(a[1 * lda_a + p * astride]);
        const float64x2_t a2 = vdupq_n_f64(a[2 * lda_a + p * astride]);
        const float64x2_t a3 = vdupq_n_f64(a[3 * lda_a + p * astride]);
        c00 = vfmaq_f64(c00, a0, b0);
        c01 = vfmaq_f64(c01, a0, b1);
        c10 = vfmaq_f64(c10, a1, b0);
        c11 = vfmaq_f64(c11, a1, b1);
        c20 = vfmaq_f64(c20, a2, b0);
        c21 = vfmaq_f64(c21, a2, b1);
        c30 = vfmaq_f64(c30, a3, b0);
        c31 = vfmaq_f64(c31, a3, b1);
    }
    vst1q_f64(c + 0 * n, c00);
    vst1q_f64(c + 0 * n + 2, c01);
    vst1q_f64(c + 1 * n, c10);
    vst1q_f64(c + 1 * n + 2, c11);
    vst1q_f64(c + 2 * n, c20);
    vst1q_f64(c + 2 * n + 2, c21);
    vst1q_f64(c + 3 * n, c30);
    vst1q_f64(c + 3 * n + 2, c31);
}

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

void gemm_driver(const double* a, const double* b, double* c, int m, int k, int n,
                 int lda_a, int astride, bool acc) {
    const int n4 = n & ~3;
    int i = 0;
    for (; i + 4 <= m; i += 4) {
        const double* ai = a + static_cast<size_t>(i) * lda_a;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n4; j += 4) kernel_4x4(ai, b + j, ci + j, k, lda_a, astride, n, acc);
        if (n4 < n) kernel_tail(ai, b, ci, 4, k, lda_a, astride, n, n4, n - n4, acc);
    }
    if (i < m)
        kernel_tail(a + static_cast<size_t>(i) * lda_a, b, c + static_cast<size_t>(i) * n,
                    m - i, k, lda_a, astride, n, 0, n, acc);
}

void v_gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    gemm_driver(a, b, c, m, k, n, k, 1, acc);
}

void v_gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    gemm_driver(a, b, c, m, k, n, 1, m, acc);
}

double v_dot(const double* a, const double* b, int n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    int i = 0;
    for (; i + 2 <= n; i += 2) acc = vfmaq_f64(acc, vld1q_f64(a + i), vld1q_f64(b + i));
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void v_axpy(double alpha, const double* x, double* y, int n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    int i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void v_add(const double* a, const double* b, double* out, int n) {
    int i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_sub(const double* a, const double* b, double* out, int n) {
    int i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void v_mul(const double* a, const double* b, double* out, int n) {
    int i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_scale(const double* x, double s, double* out, int n) {
    const float64x2_t vs = vdupq_n_f64(s);
    int i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vs, vld1q_f64(x + i)));
    for (; i < n; ++i) out[i] = s * x[i];
}

void v_leaky_relu(const double* x, double* out, int n, double slope) {
    const float64x2_t vs = vdupq_n_f64(slope);
    const float64x2_t zero = vdupq_n_f64(0.0);
    int i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t v = vld1q_f64(x + i);
        const uint64x2_t pos = vcgtq_f64(v, zero);
        vst1q_f64(out + i, vbslq_f64(pos, v, vmulq_f64(vs, v)));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void v_leaky_relu_grad(const double* x, const double* dy, double* dx, int n, double slope) {
    const float64x2_t vs = vdupq_n_f64(slope);
    const float64x2_t one = vdupq_n_f64(1.0);
    const float64x2_t zero = vdupq_n_f64(0.0);
    int i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t v = vld1q_f64(x + i);
        const float64x2_t g = vbslq_f64(vcgtq_f64(v, zero), one, vs);
        vst1q_f64(dx + i, vfmaq_f64(vld1q_f64(dx + i), g, vld1q_f64(dy + i)));
    }
    for (; i < n; ++i) dx[i] = std::fma(x[i] > 0.0 ? 1.0 : slope, dy[i], dx[i]);
}

double v_reduce_sum(const double* x, int n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    int i = 0;
    for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(x + i));
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

}  // namespace

KernelTable neon_table() {
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
    t.reduce_sum = v_reduce_sum;
    // exp_vec / sigmoid / softmax_row stay scalar on this ISA.
    return t;
}

}  // namespace geco::simd

#endif  // __aarch64__
