#include "koopwind/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "koopwind/kernels.hpp"

namespace koopwind {
namespace {

// SVD of a matrix whose transpose is given row-wise: `w` holds the n columns
// of an m x n (m >= n) matrix as contiguous rows.
Svd svd_columns(Matrix w) {
    const std::size_t n = w.rows();
    const std::size_t m = w.cols();
    Matrix vt = Matrix::identity(n);  // row j holds column j of V
    constexpr double kEps = 1e-15;
    constexpr int kMaxSweeps = 80;

    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double* wp = w.data() + p * m;
                double* wq = w.data() + q * m;
                const double alpha = kernels::dot(wp, wp, m);
                const double beta = kernels::dot(wq, wq, m);
                const double gamma = kernels::dot(wp, wq, m);
                if (alpha == 0.0 || beta == 0.0) continue;
                if (std::abs(gamma) <= kEps * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double a = wp[i];
                    const double b = wq[i];
                    wp[i] = c * a - s * b;
                    wq[i] = s * a + c * b;
                }
                double* vp = vt.data() + p * n;
                double* vq = vt.data() + q * n;
                for (std::size_t i = 0; i < n; ++i) {
                    const double a = vp[i];
                    const double b = vq[i];
                    vp[i] = c * a - s * b;
                    vq[i] = s * a + c * b;
                }
            }
        }
        if (!rotated) break;
    }

    Vector sigma(n);
    for (std::size_t j = 0; j < n; ++j) sigma[j] = norm2(w.row_span(j));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

    Svd out{Matrix(m, n), Vector(n), Matrix(n, n)};
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = order[k];
        out.s[k] = sigma[j];
        const double inv = sigma[j] > 0.0 ? 1.0 / sigma[j] : 0.0;
        for (std::size_t i = 0; i < m; ++i) out.u(i, k) = w(j, i) * inv;
        for (std::size_t i = 0; i < n; ++i) out.v(i, k) = vt(j, i);
    }
    return out;
}

}  // namespace

Svd svd(const Matrix& m) {
    require(!m.empty(), "empty matrix");
    if (!m.all_finite()) throw NumericalError("svd: non-finite entries");
    if (m.rows() >= m.cols()) return svd_columns(m.transposed());
    // M^T = U' S V'^T  =>  M = V' S U'^T
    Svd t = svd_columns(m);
    return Svd{std::move(t.v), std::move(t.s), std::move(t.u)};
}

Matrix pinv(const Matrix& m, double tol) {
    require(m.rows() > 0 && m.cols() > 0, "empty matrix");
    require(tol >= 0.0, "pinv tolerance must be non-negative");
    const Svd d = svd(m);
    const double cutoff = d.s.empty() ? 0.0 : tol * d.s.front();
    // pinv = V diag(1/s) U^T, accumulated as scaled V columns times U^T.
    Matrix vs(d.v.rows(), d.s.size());
    for (std::size_t k = 0; k < d.s.size(); ++k) {
        if (d.s[k] <= cutoff || d.s[k] == 0.0) continue;
        const double inv = 1.0 / d.s[k];
        for (std::size_t i = 0; i < d.v.rows(); ++i) vs(i, k) = d.v(i, k) * inv;
    }
    Matrix out;
    gemm(1.0, vs, Trans::No, d.u, Trans::Yes, 0.0, out);
    return out;
}

double condition_number(const Matrix& m) {
    const Svd d = svd(m);
    if (d.s.empty() || d.s.back() == 0.0) return std::numeric_limits<double>::infinity();
    return d.s.front() / d.s.back();
}

SymEigen sym_eigen(const Matrix& a_in) {
    require(a_in.rows() == a_in.cols(), "sym_eigen requires a square matrix");
    const std::size_t n = a_in.rows();
    Matrix a = symmetrized(a_in);
    Matrix v = Matrix::identity(n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        double diag = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            diag += a(i, i) * a(i, i);
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        }
        if (off <= 1e-30 * diag || off == 0.0) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });
    SymEigen out{Vector(n), Matrix(n, n)};
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = a(order[k], order[k]);
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
    }
    return out;
}

std::optional<Matrix> cholesky(const Matrix& a) {
    require(a.rows() == a.cols(), "cholesky requires a square matrix");
    const std::size_t n = a.rows();
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > 0.0)) return std::nullopt;
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }
    return l;
}

Vector cholesky_solve(const Matrix& l, std::span<const double> b) {
    const std::size_t n = l.rows();
    require(b.size() == n, "cholesky_solve dimension mismatch");
    Vector y(b.begin(), b.end());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) y[i] -= l(i, k) * y[k];
        y[i] /= l(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t k = i + 1; k < n; ++k) y[i] -= l(k, i) * y[k];
        y[i] /= l(i, i);
    }
    return y;
}

Vector least_squares(const Matrix& a_in, std::span<const double> b_in) {
    const std::size_t m = a_in.rows();
    const std::size_t n = a_in.cols();
    require(b_in.size() == m, "least_squares dimension mismatch");
    require(n > 0, "empty matrix");
    if (m < n) return pinv(a_in) * b_in;

    Matrix a = a_in;
    Vector b(b_in.begin(), b_in.end());
    Vector diag(n);
    double max_diag = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        double norm = 0.0;
        for (std::size_t i = k; i < m; ++i) norm += a(i, k) * a(i, k);
        norm = std::sqrt(norm);
        if (norm == 0.0) return pinv(a_in) * b_in;
        const double alpha = a(k, k) > 0.0 ? -norm : norm;
        // v = x - alpha e1, stored in place below the diagonal
        a(k, k) -= alpha;
        double vnorm2 = 0.0;
        for (std::size_t i = k; i < m; ++i) vnorm2 += a(i, k) * a(i, k);
        if (vnorm2 > 0.0) {
            for (std::size_t j = k + 1; j < n; ++j) {
                double s = 0.0;
                for (std::size_t i = k; i < m; ++i) s += a(i, k) * a(i, j);
                s *= 2.0 / vnorm2;
                for (std::size_t i = k; i < m; ++i) a(i, j) -= s * a(i, k);
            }
            double s = 0.0;
            for (std::size_t i = k; i < m; ++i) s += a(i, k) * b[i];
            s *= 2.0 / vnorm2;
            for (std::size_t i = k; i < m; ++i) b[i] -= s * a(i, k);
        }
        diag[k] = alpha;
        max_diag = std::max(max_diag, std::abs(alpha));
    }
    for (std::size_t k = 0; k < n; ++k) {
        if (std::abs(diag[k]) <= 1e-13 * max_diag) return pinv(a_in) * b_in;
    }
    Vector x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t j = i + 1; j < n; ++j) s -= a(i, j) * x[j];
        x[i] = s / diag[i];
    }
    return x;
}

Matrix symmetrized(const Matrix& a) {
    require(a.rows() == a.cols(), "symmetrize requires a square matrix");
    Matrix s = a;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j) {
            const double v = 0.5 * (a(i, j) + a(j, i));
            s(i, j) = v;
            s(j, i) = v;
        }
    return s;
}

}  // namespace koopwind
