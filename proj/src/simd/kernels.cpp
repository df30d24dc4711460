// Kernel dispatch. The active table is resolved once (best available ISA,
// or whatever GECO_SIMD requests) and then read through plain function
// pointers; null entries in a vector table fall back to the scalar
// reference so partially-specialized ISAs stay usable.

#include "geco/simd/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "geco/common.hpp"
#include "kernel_table.hpp"

namespace geco::simd {
namespace {

bool isa_supported(Isa isa) {
    switch (isa) {
        case Isa::Scalar:
            return true;
#if defined(__x86_64__) || defined(_M_X64)
        case Isa::Avx2:
            return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
        case Isa::Avx512:
            return __builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512dq");
#endif
#if defined(__aarch64__)
        case Isa::Neon:
            return true;
#endif
        default:
            return false;
    }
}

KernelTable build_table(Isa isa) {
    KernelTable t = scalar_table();
    KernelTable v;
    switch (isa) {
        case Isa::Scalar:
            return t;
#if defined(__x86_64__) || defined(_M_X64)
        case Isa::Avx2:
            v = avx2_table();
            break;
        case Isa::Avx512:
            v = avx512_table();
            break;
#endif
#if defined(__aarch64__)
        case Isa::Neon:
            v = neon_table();
            break;
#endif
        default:
            return t;
    }
    if (v.gemm_nn) t.gemm_nn = v.gemm_nn;
    if (v.gemm_tn) t.gemm_tn = v.gemm_tn;
    if (v.dot) t.dot = v.dot;
    if (v.axpy) t.axpy = v.axpy;
    if (v.add) t.add = v.add;
    if (v.sub) t.sub = v.sub;
    if (v.mul) t.mul = v.mul;
    if (v.scale) t.scale = v.scale;
    if (v.leaky_relu) t.leaky_relu = v.leaky_relu;
    if (v.leaky_relu_grad) t.leaky_relu_grad = v.leaky_relu_grad;
    if (v.exp_vec) t.exp_vec = v.exp_vec;
    if (v.sigmoid) t.sigmoid = v.sigmoid;
    if (v.softmax_row) t.softmax_row = v.softmax_row;
    if (v.reduce_sum) t.reduce_sum = v.reduce_sum;
    return t;
}

Isa pick_default() {
    if (const char* env = std::getenv("GECO_SIMD")) {
        if (std::strcmp(env, "scalar") == 0) return Isa::Scalar;
        if (std::strcmp(env, "avx2") == 0 && isa_supported(Isa::Avx2)) return Isa::Avx2;
        if (std::strcmp(env, "avx512") == 0 && isa_supported(Isa::Avx512)) return Isa::Avx512;
        if (std::strcmp(env, "neon") == 0 && isa_supported(Isa::Neon)) return Isa::Neon;
        // "auto" or anything unrecognized/unavailable falls through to
        // detection.
    }
    if (isa_supported(Isa::Avx512)) return Isa::Avx512;
    if (isa_supported(Isa::Avx2)) return Isa::Avx2;
    if (isa_supported(Isa::Neon)) return Isa::Neon;
    return Isa::Scalar;
}

struct Dispatch {
    Isa isa;
    KernelTable table;
    Dispatch() : isa(pick_default()), table(build_table(isa)) {}
};

Dispatch& dispatch() {
    static Dispatch d;
    return d;
}

}  // namespace

const char* isa_name(Isa isa) {
    switch (isa) {
        case Isa::Scalar:
            return "scalar";
        case Isa::Avx2:
            return "avx2";
        case Isa::Avx512:
            return "avx512";
        case Isa::Neon:
            return "neon";
    }
    return "?";
}

std::vector<Isa> available_isas() {
    std::vector<Isa> out{Isa::Scalar};
    for (Isa isa : {Isa::Avx2, Isa::Avx512, Isa::Neon})
        if (isa_supported(isa)) out.push_back(isa);
    return out;
}

Isa active_isa() { return dispatch().isa; }

void force_isa(Isa isa) {
    if (!isa_supported(isa))
        throw ShapeError(std::string("instruction set not available on this machine: ") +
                         isa_name(isa));
    dispatch().isa = isa;
    dispatch().table = build_table(isa);
}

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    dispatch().table.gemm_nn(a, b, c, m, k, n, acc);
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    dispatch().table.gemm_tn(a, b, c, m, k, n, acc);
}

double dot(const double* a, const double* b, int n) { return dispatch().table.dot(a, b, n); }

void axpy(double alpha, const double* x, double* y, int n) {
    dispatch().table.axpy(alpha, x, y, n);
}

void add(const double* a, const double* b, double* out, int n) {
    dispatch().table.add(a, b, out, n);
}

void sub(const double* a, const double* b, double* out, int n) {
    dispatch().table.sub(a, b, out, n);
}

void mul(const double* a, const double* b, double* out, int n) {
    dispatch().table.mul(a, b, out, n);
}

void scale(const double* x, double s, double* out, int n) {
    dispatch().table.scale(x, s, out, n);
}

void leaky_relu(const double* x, double* out, int n, double slope) {
    dispatch().table.leaky_relu(x, out, n, slope);
}

void leaky_relu_grad(const double* x, const double* dy, double* dx, int n, double slope) {
    dispatch().table.leaky_relu_grad(x, dy, dx, n, slope);
}

void exp_vec(const double* x, double* out, int n) { dispatch().table.exp_vec(x, out, n); }

void sigmoid(const double* x, double* out, int n) { dispatch().table.sigmoid(x, out, n); }

void softmax_row(double* x, int n) { dispatch().table.softmax_row(x, n); }

double reduce_sum(const double* x, int n) { return dispatch().table.reduce_sum(x, n); }

void transpose(const double* a, double* out, int m, int n) {
    constexpr int kBlock = 32;
    for (int i0 = 0; i0 < m; i0 += kBlock) {
        const int i1 = i0 + kBlock < m ? i0 + kBlock : m;
        for (int j0 = 0; j0 < n; j0 += kBlock) {
            const int j1 = j0 + kBlock < n ? j0 + kBlock : n;
            for (int i = i0; i < i1; ++i)
                for (int j = j0; j < j1; ++j)
                    out[static_cast<size_t>(j) * m + i] = a[static_cast<size_t>(i) * n + j];
        }
    }
}

}  // namespace geco::simd
