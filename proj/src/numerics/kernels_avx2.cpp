// Built with -mavx2 -mfma; only reached through the dispatch table after a
// CPUID check.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <vector>

#include "koopwind/kernels.hpp"

namespace koopwind::kernels {
namespace {

double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d s0 = _mm256_setzero_pd();
    __m256d s1 = _mm256_setzero_pd();
    __m256d s2 = _mm256_setzero_pd();
    __m256d s3 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
        s2 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 8), _mm256_loadu_pd(b + i + 8), s2);
        s3 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 12), _mm256_loadu_pd(b + i + 12), s3);
    }
    for (; i + 4 <= n; i += 4) s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    double s = hsum(_mm256_add_pd(_mm256_add_pd(s0, s1), _mm256_add_pd(s2, s3)));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 12;
constexpr std::size_t kKc = 256;
constexpr std::size_t kNc = kNr * 64;
constexpr std::size_t kMc = kMr * 16;

// Packs op(B)[kc x nc] into column panels of kNr, zero-padding the last panel.
void pack_b(std::size_t kc, std::size_t nc, const double* b, std::size_t rs, std::size_t cs, double* out) {
    for (std::size_t j0 = 0; j0 < nc; j0 += kNr) {
        const std::size_t w = std::min(kNr, nc - j0);
        if (rs == 1 && w == kNr) {
            for (std::size_t j = 0; j < kNr; ++j) {
                const double* src = b + (j0 + j) * cs;
                for (std::size_t p = 0; p < kc; ++p) out[p * kNr + j] = src[p];
            }
            out += kNr * kc;
            continue;
        }
        for (std::size_t p = 0; p < kc; ++p) {
            const double* src = b + p * rs + j0 * cs;
            std::size_t j = 0;
            if (cs == 1)
                for (; j < w; ++j) out[j] = src[j];
            else
                for (; j < w; ++j) out[j] = src[j * cs];
            for (; j < kNr; ++j) out[j] = 0.0;
            out += kNr;
        }
    }
}

// Packs alpha * op(A)[mr x kc] as kc groups of kMr, zero-padding missing rows.
void pack_a(std::size_t mr, std::size_t kc, double alpha, const double* a, std::size_t rs, std::size_t cs,
            double* out) {
    for (std::size_t p = 0; p < kc; ++p) {
        std::size_t r = 0;
        for (; r < mr; ++r) out[r] = alpha * a[r * rs + p * cs];
        for (; r < kMr; ++r) out[r] = 0.0;
        out += kMr;
    }
}

// 4 x 12 tile with named accumulators so all twelve stay in registers.
void micro_kernel(std::size_t kc, const double* ap, const double* bp, double* c, std::size_t ldc, std::size_t mr,
                  std::size_t ncols) {
    __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd(), c02 = _mm256_setzero_pd();
    __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd(), c12 = _mm256_setzero_pd();
    __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd(), c22 = _mm256_setzero_pd();
    __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd(), c32 = _mm256_setzero_pd();
    for (std::size_t p = 0; p < kc; ++p) {
        const __m256d b0 = _mm256_load_pd(bp);
        const __m256d b1 = _mm256_load_pd(bp + 4);
        const __m256d b2 = _mm256_load_pd(bp + 8);
        bp += kNr;
        __m256d av = _mm256_broadcast_sd(ap);
        c00 = _mm256_fmadd_pd(av, b0, c00);
        c01 = _mm256_fmadd_pd(av, b1, c01);
        c02 = _mm256_fmadd_pd(av, b2, c02);
        av = _mm256_broadcast_sd(ap + 1);
        c10 = _mm256_fmadd_pd(av, b0, c10);
        c11 = _mm256_fmadd_pd(av, b1, c11);
        c12 = _mm256_fmadd_pd(av, b2, c12);
        av = _mm256_broadcast_sd(ap + 2);
        c20 = _mm256_fmadd_pd(av, b0, c20);
        c21 = _mm256_fmadd_pd(av, b1, c21);
        c22 = _mm256_fmadd_pd(av, b2, c22);
        av = _mm256_broadcast_sd(ap + 3);
        c30 = _mm256_fmadd_pd(av, b0, c30);
        c31 = _mm256_fmadd_pd(av, b1, c31);
        c32 = _mm256_fmadd_pd(av, b2, c32);
        ap += kMr;
    }
    if (mr == kMr && ncols == kNr) {
        auto add_row = [](double* cr, __m256d x0, __m256d x1, __m256d x2) {
            _mm256_storeu_pd(cr, _mm256_add_pd(_mm256_loadu_pd(cr), x0));
            _mm256_storeu_pd(cr + 4, _mm256_add_pd(_mm256_loadu_pd(cr + 4), x1));
            _mm256_storeu_pd(cr + 8, _mm256_add_pd(_mm256_loadu_pd(cr + 8), x2));
        };
        add_row(c, c00, c01, c02);
        add_row(c + ldc, c10, c11, c12);
        add_row(c + 2 * ldc, c20, c21, c22);
        add_row(c + 3 * ldc, c30, c31, c32);
        return;
    }
    alignas(32) double tile[kMr * kNr];
    _mm256_store_pd(tile, c00);
    _mm256_store_pd(tile + 4, c01);
    _mm256_store_pd(tile + 8, c02);
    _mm256_store_pd(tile + 12, c10);
    _mm256_store_pd(tile + 16, c11);
    _mm256_store_pd(tile + 20, c12);
    _mm256_store_pd(tile + 24, c20);
    _mm256_store_pd(tile + 28, c21);
    _mm256_store_pd(tile + 32, c22);
    _mm256_store_pd(tile + 36, c30);
    _mm256_store_pd(tile + 40, c31);
    _mm256_store_pd(tile + 44, c32);
    for (std::size_t r = 0; r < mr; ++r)
        for (std::size_t j = 0; j < ncols; ++j) c[r * ldc + j] += tile[r * kNr + j];
}

struct AlignedBuffer {
    double* ptr = nullptr;
    std::size_t cap = 0;
    ~AlignedBuffer() { std::free(ptr); }
    double* get(std::size_t n) {
        if (n > cap) {
            std::free(ptr);
            cap = (n + 7) & ~std::size_t{7};
            ptr = static_cast<double*>(std::aligned_alloc(32, cap * sizeof(double)));
        }
        return ptr;
    }
};

// Few output rows: one pass over B, no packing. Requires B rows or B
// columns to be contiguous.
void gemm_small_m(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a, std::size_t a_rs,
                  std::size_t a_cs, const double* b, std::size_t b_rs, std::size_t b_cs, double* c, std::size_t ldc) {
    double ap[kMr];
    if (b_cs == 1) {
        for (std::size_t p = 0; p < k; ++p) {
            for (std::size_t i = 0; i < m; ++i) ap[i] = alpha * a[i * a_rs + p * a_cs];
            const double* bp = b + p * b_rs;
            for (std::size_t i = 0; i < m; ++i) {
                double* ci = c + i * ldc;
                const __m256d av = _mm256_set1_pd(ap[i]);
                std::size_t j = 0;
                for (; j + 4 <= n; j += 4)
                    _mm256_storeu_pd(ci + j, _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + j), _mm256_loadu_pd(ci + j)));
                for (; j < n; ++j) ci[j] += ap[i] * bp[j];
            }
        }
        return;
    }
    // B(p, j) = b[p + j * b_cs]: each output is a dot product over p.
    for (std::size_t j = 0; j < n; ++j) {
        const double* bj = b + j * b_cs;
        for (std::size_t i = 0; i < m; ++i) {
            const double* ai = a + i * a_rs;
            double sum = 0.0;
            if (a_cs == 1) {
                __m256d acc = _mm256_setzero_pd();
                std::size_t p = 0;
                for (; p + 4 <= k; p += 4) acc = _mm256_fmadd_pd(_mm256_loadu_pd(ai + p), _mm256_loadu_pd(bj + p), acc);
                sum = hsum(acc);
                for (; p < k; ++p) sum += ai[p] * bj[p];
            } else {
                for (std::size_t p = 0; p < k; ++p) sum += ai[p * a_cs] * bj[p];
            }
            c[i * ldc + j] += alpha * sum;
        }
    }
}

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a, std::size_t a_rs,
               std::size_t a_cs, const double* b, std::size_t b_rs, std::size_t b_cs, double* c, std::size_t ldc) {
    if (m == 0 || n == 0 || k == 0 || alpha == 0.0) return;
    if (m <= kMr && (b_cs == 1 || b_rs == 1)) {
        gemm_small_m(m, n, k, alpha, a, a_rs, a_cs, b, b_rs, b_cs, c, ldc);
        return;
    }
    thread_local AlignedBuffer bbuf, abuf;
    for (std::size_t jc = 0; jc < n; jc += kNc) {
        const std::size_t nc = std::min(kNc, n - jc);
        const std::size_t panels = (nc + kNr - 1) / kNr;
        for (std::size_t pc = 0; pc < k; pc += kKc) {
            const std::size_t kc = std::min(kKc, k - pc);
            double* bp = bbuf.get(panels * kNr * kc);
            pack_b(kc, nc, b + pc * b_rs + jc * b_cs, b_rs, b_cs, bp);
            for (std::size_t ic = 0; ic < m; ic += kMc) {
                const std::size_t mc = std::min(kMc, m - ic);
                const std::size_t row_panels = (mc + kMr - 1) / kMr;
                double* ap = abuf.get(row_panels * kMr * kc);
                for (std::size_t ip = 0; ip < row_panels; ++ip) {
                    const std::size_t i = ic + ip * kMr;
                    pack_a(std::min(kMr, m - i), kc, alpha, a + i * a_rs + pc * a_cs, a_rs, a_cs, ap + ip * kMr * kc);
                }
                for (std::size_t jp = 0; jp < panels; ++jp) {
                    const std::size_t ncols = std::min(kNr, nc - jp * kNr);
                    for (std::size_t ip = 0; ip < row_panels; ++ip) {
                        const std::size_t i = ic + ip * kMr;
                        micro_kernel(kc, ap + ip * kMr * kc, bp + jp * kNr * kc, c + i * ldc + jc + jp * kNr, ldc,
                                     std::min(kMr, m - i), ncols);
                    }
                }
            }
        }
    }
}

void adam_avx2(double* w, const double* g, double* m, double* v, std::size_t n, const AdamParams& p) {
    const double step = p.lr / p.bias_correction1;
    const double inv_bc2 = 1.0 / p.bias_correction2;
    const __m256d b1 = _mm256_set1_pd(p.beta1);
    const __m256d b1c = _mm256_set1_pd(1.0 - p.beta1);
    const __m256d b2 = _mm256_set1_pd(p.beta2);
    const __m256d b2c = _mm256_set1_pd(1.0 - p.beta2);
    const __m256d vstep = _mm256_set1_pd(step);
    const __m256d vbc2 = _mm256_set1_pd(inv_bc2);
    const __m256d veps = _mm256_set1_pd(p.eps);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d gi = _mm256_loadu_pd(g + i);
        // Same operation order as the scalar reference so both paths round alike.
        const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(b1c, gi));
        const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                         _mm256_mul_pd(_mm256_mul_pd(b2c, gi), gi));
        _mm256_storeu_pd(m + i, mi);
        _mm256_storeu_pd(v + i, vi);
        const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(_mm256_mul_pd(vi, vbc2)), veps);
        const __m256d upd = _mm256_div_pd(_mm256_mul_pd(vstep, mi), denom);
        _mm256_storeu_pd(w + i, _mm256_sub_pd(_mm256_loadu_pd(w + i), upd));
    }
    for (; i < n; ++i) {
        m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g[i];
        v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g[i] * g[i];
        w[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + p.eps);
    }
}

// exp(x) for |x| <= 708: x = n ln2 + r, |r| <= ln2/2, degree-13 Taylor in r.
__m256d exp_pd(__m256d x) {
    const __m256d lim = _mm256_set1_pd(708.0);
    x = _mm256_min_pd(_mm256_max_pd(x, _mm256_sub_pd(_mm256_setzero_pd(), lim)), lim);
    const __m256d log2e = _mm256_set1_pd(1.4426950408889634074);
    const __m256d ln2_hi = _mm256_set1_pd(6.93145751953125e-1);
    const __m256d ln2_lo = _mm256_set1_pd(1.42860682030941723212e-6);
    const __m256d nf = _mm256_round_pd(_mm256_mul_pd(x, log2e), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256d r = _mm256_fnmadd_pd(nf, ln2_hi, x);
    r = _mm256_fnmadd_pd(nf, ln2_lo, r);
    static constexpr double kCoef[] = {
        1.0 / 6227020800.0, 1.0 / 479001600.0, 1.0 / 39916800.0, 1.0 / 3628800.0, 1.0 / 362880.0,
        1.0 / 40320.0,      1.0 / 5040.0,      1.0 / 720.0,      1.0 / 120.0,     1.0 / 24.0,
        1.0 / 6.0,          0.5,               1.0,              1.0};
    __m256d poly = _mm256_set1_pd(kCoef[0]);
    for (std::size_t i = 1; i < sizeof(kCoef) / sizeof(double); ++i) {
        poly = _mm256_fmadd_pd(poly, r, _mm256_set1_pd(kCoef[i]));
    }
    // 2^n via exponent bits.
    const __m128i n32 = _mm256_cvtpd_epi32(nf);
    __m256i n64 = _mm256_cvtepi32_epi64(n32);
    n64 = _mm256_add_epi64(n64, _mm256_set1_epi64x(1023));
    const __m256d scale = _mm256_castsi256_pd(_mm256_slli_epi64(n64, 52));
    return _mm256_mul_pd(poly, scale);
}

void sigmoid_avx2(const double* z, double* out, std::size_t n) {
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d e = exp_pd(_mm256_sub_pd(zero, _mm256_loadu_pd(z + i)));
        _mm256_storeu_pd(out + i, _mm256_div_pd(one, _mm256_add_pd(one, e)));
    }
    for (; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-z[i]));
}

void swish_avx2(const double* z, double* out, std::size_t n) {
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d zi = _mm256_loadu_pd(z + i);
        const __m256d e = exp_pd(_mm256_sub_pd(zero, zi));
        _mm256_storeu_pd(out + i, _mm256_div_pd(zi, _mm256_add_pd(one, e)));
    }
    for (; i < n; ++i) out[i] = z[i] / (1.0 + std::exp(-z[i]));
}

}  // namespace

const KernelTable* avx2_table() {
    static const KernelTable table{dot_avx2, axpy_avx2, gemm_avx2, adam_avx2, sigmoid_avx2, swish_avx2};
    return &table;
}

}  // namespace koopwind::kernels
