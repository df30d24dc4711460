// Reference implementations. These define the semantics every vector
// variant must reproduce (the equivalence tests compare against them), so
// keep them simple and obviously correct.

#include <algorithm>
#include <cmath>
#include <cstring>

#include "kernel_table.hpp"

namespace geco::simd {
namespace {

void s_gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    if (!acc) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void s_gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    if (!acc) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int p = 0; p < k; ++p) {
        const double* ap = a + static_cast<size_t>(p) * m;
        const double* bp = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double av = ap[i];
            if (av == 0.0) continue;
            double* ci = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

double s_dot(const double* a, const double* b, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

// axpy and leaky_relu_grad are fused multiply-adds: std::fma is correctly
// rounded, so results are bit-identical to the vector fmadd instructions.
void s_axpy(double alpha, const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void s_add(const double* a, const double* b, double* out, int n) {
    for (int i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_sub(const double* a, const double* b, double* out, int n) {
    for (int i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void s_mul(const double* a, const double* b, double* out, int n) {
    for (int i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_scale(const double* x, double s, double* out, int n) {
    for (int i = 0; i < n; ++i) out[i] = s * x[i];
}

void s_leaky_relu(const double* x, double* out, int n, double slope) {
    for (int i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void s_leaky_relu_grad(const double* x, const double* dy, double* dx, int n, double slope) {
    for (int i = 0; i < n; ++i) dx[i] = std::fma(x[i] > 0.0 ? 1.0 : slope, dy[i], dx[i]);
}

void s_exp_vec(const double* x, double* out, int n) {
    for (int i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}

void s_sigmoid(const double* x, double* out, int n) {
    for (int i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void s_softmax_row(double* x, int n) {
    double mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        sum += x[i];
    }
    const double inv = 1.0 / sum;
    for (int i = 0; i < n; ++i) x[i] *= inv;
}

double s_reduce_sum(const double* x, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += x[i];
    return acc;
}

}  // namespace

KernelTable scalar_table() {
    KernelTable t;
    t.gemm_nn = s_gemm_nn;
    t.gemm_tn = s_gemm_tn;
    t.dot = s_dot;
    t.axpy = s_axpy;
    t.add = s_add;
    t.sub = s_sub;
    t.mul = s_mul;
    t.scale = s_scale;
    t.leaky_relu = s_leaky_relu;
    t.leaky_relu_grad = s_leaky_relu_grad;
    t.exp_vec = s_exp_vec;
    t.sigmoid = s_sigmoid;
    t.softmax_row = s_softmax_row;
    t.reduce_sum = s_reduce_sum;
    return t;
}

}  // namespace geco::simd
