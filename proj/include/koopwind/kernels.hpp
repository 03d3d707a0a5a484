#pragma once

// Inner-loop arithmetic kernels. Each kernel has a portable scalar reference
// implementation and, where the CPU supports it, an AVX2/FMA variant. The
// variant is chosen once at startup from CPUID and can be pinned with the
// KOOPWIND_ISA environment variable ("scalar" or "avx2") or set_isa().
//
// Variants agree to rounding (summation order differs), so results are
// bit-reproducible only for a fixed ISA.

#include <cstddef>
#include <string_view>

namespace koopwind::kernels {

enum class Isa { Scalar, Avx2 };

struct AdamParams {
    double lr;
    double beta1;
    double beta2;
    double eps;
    double bias_correction1;  // 1 - beta1^t
    double bias_correction2;  // 1 - beta2^t
};

/// Function table for one instruction set.
struct KernelTable {
    double (*dot)(const double* a, const double* b, std::size_t n);
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // C[m x n] += alpha * A[m x k] * B[k x n], C row-major. A(i, p) is
    // a[i * a_rs + p * a_cs] and B(p, j) is b[p * b_rs + j * b_cs], so
    // transposed operands need no copy.
    void (*gemm)(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a, std::size_t a_rs,
                 std::size_t a_cs, const double* b, std::size_t b_rs, std::size_t b_cs, double* c, std::size_t ldc);
    // In-place Adam update of n parameters.
    void (*adam)(double* w, const double* g, double* m, double* v, std::size_t n, const AdamParams& p);
    // out[i] = sigmoid(z[i]) or z[i]*sigmoid(z[i])
    void (*sigmoid)(const double* z, double* out, std::size_t n);
    void (*swish)(const double* z, double* out, std::size_t n);
};

const KernelTable& scalar_table();
/// Null when the binary was built without AVX2 support.
const KernelTable* avx2_table();

bool cpu_has_avx2();
Isa active_isa();
/// Returns false (and leaves the selection unchanged) if the ISA is unavailable.
bool set_isa(Isa isa);
std::string_view isa_name(Isa isa);

const KernelTable& active();

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy(alpha, x, y, n); }
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    active().gemm(m, n, k, 1.0, a, lda, 1, b, ldb, 1, c, ldc);
}

}  // namespace koopwind::kernels
