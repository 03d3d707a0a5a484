#include "koopwind/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "koopwind/kernels.hpp"

namespace koopwind {

void require(bool cond, const std::string& message) {
    if (!cond) throw UsageError(message);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows * cols, "matrix data length does not match shape");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        require(r.size() == cols_, "ragged matrix initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::diagonal(std::span<const double> d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
}

Matrix Matrix::column(std::span<const double> v) { return Matrix(v.size(), 1, Vector(v.begin(), v.end())); }
Matrix Matrix::row(std::span<const double> v) { return Matrix(1, v.size(), Vector(v.begin(), v.end())); }

Vector Matrix::column_vector(std::size_t c) const {
    Vector v(rows_);
    for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
    return v;
}

void Matrix::set_column(std::size_t c, std::span<const double> v) {
    require(v.size() == rows_, "column length mismatch");
    for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    constexpr std::size_t kBlock = 32;
    for (std::size_t r0 = 0; r0 < rows_; r0 += kBlock) {
        for (std::size_t c0 = 0; c0 < cols_; c0 += kBlock) {
            const std::size_t r1 = std::min(rows_, r0 + kBlock);
            const std::size_t c1 = std::min(cols_, c0 + kBlock);
            for (std::size_t r = r0; r < r1; ++r)
                for (std::size_t c = c0; c < c1; ++c) t(c, r) = (*this)(r, c);
        }
    }
    return t;
}

Matrix Matrix::block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const {
    require(r0 + nr <= rows_ && c0 + nc <= cols_, "block out of range");
    Matrix b(nr, nc);
    for (std::size_t r = 0; r < nr; ++r)
        std::copy_n(data_.data() + (r0 + r) * cols_ + c0, nc, b.data() + r * nc);
    return b;
}

void Matrix::set_block(std::size_t r0, std::size_t c0, const Matrix& b) {
    require(r0 + b.rows() <= rows_ && c0 + b.cols() <= cols_, "block out of range");
    for (std::size_t r = 0; r < b.rows(); ++r)
        std::copy_n(b.data() + r * b.cols(), b.cols(), data_.data() + (r0 + r) * cols_ + c0);
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Matrix::frobenius_norm() const noexcept { return norm2(data_); }

double Matrix::max_abs() const noexcept { return norm_inf(data_); }

Matrix& Matrix::operator+=(const Matrix& o) {
    require(rows_ == o.rows_ && cols_ == o.cols_, "shape mismatch in +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
    require(rows_ == o.rows_ && cols_ == o.cols_, "shape mismatch in -=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix operator*(const Matrix& a, const Matrix& b) {
    Matrix c;
    gemm(1.0, a, Trans::No, b, Trans::No, 0.0, c);
    return c;
}

Vector operator*(const Matrix& a, std::span<const double> x) {
    require(a.cols() == x.size(), "matrix-vector dimension mismatch");
    Vector y(a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r) y[r] = kernels::dot(a.data() + r * a.cols(), x.data(), x.size());
    return y;
}

Vector transpose_times(const Matrix& a, std::span<const double> x) {
    require(a.rows() == x.size(), "transpose-vector dimension mismatch");
    Vector y(a.cols(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) kernels::axpy(x[r], a.data() + r * a.cols(), y.data(), a.cols());
    return y;
}

void gemm(double alpha, const Matrix& a, Trans ta, const Matrix& b, Trans tb, double beta, Matrix& c) {
    const std::size_t m = ta == Trans::No ? a.rows() : a.cols();
    const std::size_t k = ta == Trans::No ? a.cols() : a.rows();
    const std::size_t kb = tb == Trans::No ? b.rows() : b.cols();
    const std::size_t n = tb == Trans::No ? b.cols() : b.rows();
    require(k == kb, "gemm inner dimension mismatch");
    if (beta == 0.0) {
        if (&c == &a || &c == &b) {
            Matrix out;
            gemm(alpha, a, ta, b, tb, 0.0, out);
            c = std::move(out);
            return;
        }
        if (c.rows() == m && c.cols() == n)
            std::fill(c.values().begin(), c.values().end(), 0.0);
        else
            c = Matrix(m, n);
    } else {
        require(c.rows() == m && c.cols() == n, "gemm output shape mismatch");
        if (beta != 1.0) c *= beta;
    }
    if (m == 0 || n == 0 || k == 0 || alpha == 0.0) return;

    const std::size_t a_rs = ta == Trans::No ? a.cols() : 1, a_cs = ta == Trans::No ? 1 : a.cols();
    const std::size_t b_rs = tb == Trans::No ? b.cols() : 1, b_cs = tb == Trans::No ? 1 : b.cols();
    kernels::active().gemm(m, n, k, alpha, a.data(), a_rs, a_cs, b.data(), b_rs, b_cs, c.data(), n);
}

Matrix hstack(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows(), "hstack row mismatch");
    Matrix out(a.rows(), a.cols() + b.cols());
    out.set_block(0, 0, a);
    out.set_block(0, a.cols(), b);
    return out;
}

Matrix vstack(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols() || a.empty() || b.empty(), "vstack column mismatch");
    if (a.empty()) return b;
    if (b.empty()) return a;
    Matrix out(a.rows() + b.rows(), a.cols());
    out.set_block(0, 0, a);
    out.set_block(a.rows(), 0, b);
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "dot length mismatch");
    return kernels::dot(a.data(), b.data(), a.size());
}

double norm2(std::span<const double> a) {
    // Scaled to avoid overflow on large-magnitude entries (powers in W, squared).
    double scale = 0.0;
    for (double v : a) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) return 0.0;
    double s = 0.0;
    for (double v : a) s += (v / scale) * (v / scale);
    return scale * std::sqrt(s);
}

double norm_inf(std::span<const double> a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

}  // namespace koopwind
