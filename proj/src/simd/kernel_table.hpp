#pragma once

// Internal glue between the dispatcher and the per-ISA translation units.
// Each TU fills a KernelTable with its function pointers; entries left null
// fall back to the scalar reference implementation.

namespace geco::simd {

struct KernelTable {
    void (*gemm_nn)(const double*, const double*, double*, int, int, int, bool) = nullptr;
    void (*gemm_tn)(const double*, const double*, double*, int, int, int, bool) = nullptr;
    double (*dot)(const double*, const double*, int) = nullptr;
    void (*axpy)(double, const double*, double*, int) = nullptr;
    void (*add)(const double*, const double*, double*, int) = nullptr;
    void (*sub)(const double*, const double*, double*, int) = nullptr;
    void (*mul)(const double*, const double*, double*, int) = nullptr;
    void (*scale)(const double*, double, double*, int) = nullptr;
    void (*leaky_relu)(const double*, double*, int, double) = nullptr;
    void (*leaky_relu_grad)(const double*, const double*, double*, int, double) = nullptr;
    void (*exp_vec)(const double*, double*, int) = nullptr;
    void (*sigmoid)(const double*, double*, int) = nullptr;
    void (*softmax_row)(double*, int) = nullptr;
    double (*reduce_sum)(const double*, int) = nullptr;
};

KernelTable scalar_table();

#if defined(__x86_64__) || defined(_M_X64)
KernelTable avx2_table();
KernelTable avx512_table();
#endif

#if defined(__aarch64__)
KernelTable neon_table();
#endif

}  // namespace geco::simd
