#include <cmath>

#include "koopwind/kernels.hpp"

namespace koopwind::kernels {
namespace {

double dot_ref(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_ref(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_ref(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a, std::size_t a_rs,
              std::size_t a_cs, const double* b, std::size_t b_rs, std::size_t b_cs, double* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * ldc;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = alpha * a[i * a_rs + p * a_cs];
            const double* bp = b + p * b_rs;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j * b_cs];
        }
    }
}

void adam_ref(double* w, const double* g, double* m, double* v, std::size_t n, const AdamParams& p) {
    const double step = p.lr / p.bias_correction1;
    const double inv_bc2 = 1.0 / p.bias_correction2;
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g[i];
        v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g[i] * g[i];
        w[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + p.eps);
    }
}

void sigmoid_ref(const double* z, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-z[i]));
}

void swish_ref(const double* z, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = z[i] / (1.0 + std::exp(-z[i]));
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table{dot_ref, axpy_ref, gemm_ref, adam_ref, sigmoid_ref, swish_ref};
    return table;
}

}  // namespace koopwind::kernels
