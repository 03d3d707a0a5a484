#pragma once

#include <optional>

#include "koopwind/matrix.hpp"

namespace koopwind {

/// Thin SVD M = U diag(s) V^T with s sorted descending.
/// U is rows x r, V is cols x r, r = min(rows, cols).
struct Svd {
    Matrix u;
    Vector s;
    Matrix v;
};

/// One-sided (Hestenes) Jacobi SVD.
Svd svd(const Matrix& m);

inline constexpr double kDefaultPinvTol = 1e-10;

/// Moore-Penrose pseudoinverse. Singular values <= tol * s_max are dropped.
/// Throws UsageError("empty matrix") for a zero-sized input.
Matrix pinv(const Matrix& m, double tol = kDefaultPinvTol);

/// s_max / s_min (infinity when rank deficient).
double condition_number(const Matrix& m);

/// Symmetric eigendecomposition by cyclic Jacobi rotations; eigenvalues
/// ascending, eigenvectors in the columns of `vectors`.
struct SymEigen {
    Vector values;
    Matrix vectors;
};
SymEigen sym_eigen(const Matrix& a);

/// Lower Cholesky factor, or nullopt if `a` is not numerically positive definite.
std::optional<Matrix> cholesky(const Matrix& a);
Vector cholesky_solve(const Matrix& lower, std::span<const double> b);

/// Least-squares solution of min ||a x - b|| via Householder QR, falling back
/// to the pseudoinverse when `a` is column-rank deficient.
Vector least_squares(const Matrix& a, std::span<const double> b);

/// Symmetrized copy (A + A^T) / 2.
Matrix symmetrized(const Matrix& a);

}  // namespace koopwind
