#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace geco::simd {

/// Instruction sets a kernel table can be built for. Detection happens once
/// at startup; the choice is stable for the lifetime of the process, so all
/// numeric results are reproducible on a given machine.
enum class Isa {
    Scalar,
    Avx2,
    Avx512,
    Neon,
};

const char* isa_name(Isa isa);

/// ISAs usable on this machine (always contains Scalar).
std::vector<Isa> available_isas();

/// Currently active ISA. Resolved on first use: the best available one,
/// unless the GECO_SIMD environment variable (scalar|avx2|avx512|neon|auto)
/// says otherwise.
Isa active_isa();

/// Overrides the active ISA (used by the equivalence tests). Throws
/// ShapeError if the ISA is not available on this machine.
void force_isa(Isa isa);

// Row-major GEMM. c[m x n] = a[m x k] * b[k x n], accumulating into c when
// `acc` is set.
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc);

// c[m x n] = a^T * b with a stored as [k x m].
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc);

double dot(const double* a, const double* b, int n);

// y += alpha * x
void axpy(double alpha, const double* x, double* y, int n);

void add(const double* a, const double* b, double* out, int n);
void sub(const double* a, const double* b, double* out, int n);
void mul(const double* a, const double* b, double* out, int n);
void scale(const double* x, double s, double* out, int n);

void leaky_relu(const double* x, double* out, int n, double slope);
// dx += dy * (x > 0 ? 1 : slope)
void leaky_relu_grad(const double* x, const double* dy, double* dx, int n, double slope);

void exp_vec(const double* x, double* out, int n);
void sigmoid(const double* x, double* out, int n);

// In-place numerically stable softmax of one row.
void softmax_row(double* x, int n);

double reduce_sum(const double* x, int n);

// Plain utilities (no per-ISA variants).
void transpose(const double* a, double* out, int m, int n);

}  // namespace geco::simd
