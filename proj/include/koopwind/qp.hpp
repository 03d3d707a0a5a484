#pragma once

#include <optional>

#include "koopwind/matrix.hpp"

namespace koopwind {

/// Square-root form of a convex quadratic: H = M^T M, f = -M^T r, i.e. the
/// objective equals 1/2 ||M u - r||^2 up to a constant. Solving subproblems on
/// M instead of H squares away most of the conditioning of MPC Hessians.
struct LeastSquaresForm {
    Matrix m;
    Vector r;
};

/// minimize 1/2 u^T H u + f^T u  subject to  lower <= u <= upper
class QpProblem {
public:
    /// Validates shapes and finiteness, requires symmetry to 1e-9 (relative)
    /// and stores the symmetrized Hessian.
    QpProblem(Matrix hessian, Vector linear, Vector lower, Vector upper);

    /// Builds the problem from its square-root form.
    static QpProblem from_least_squares(LeastSquaresForm form, Vector lower, Vector upper);

    std::size_t dimension() const noexcept { return linear_.size(); }
    const Matrix& hessian() const noexcept { return hessian_; }
    const Vector& linear() const noexcept { return linear_; }
    const Vector& lower() const noexcept { return lower_; }
    const Vector& upper() const noexcept { return upper_; }
    const std::optional<LeastSquaresForm>& factor() const noexcept { return factor_; }

    double objective(std::span<const double> u) const;
    Vector gradient(std::span<const double> u) const;

private:
    Matrix hessian_;
    Vector linear_;
    Vector lower_;
    Vector upper_;
    std::optional<LeastSquaresForm> factor_;
};

struct QpOptions {
    int max_iterations = 5000;  // projected-gradient cap
    int stall_window = 50;      // PG iterations with an unchanged active set before polishing
    double tolerance = 1e-10;   // KKT residual on the normalized problem
};

struct QpResult {
    Vector u;
    double objective = 0.0;
    double kkt_residual = 0.0;         // on the problem as given
    double kkt_residual_scaled = 0.0;  // on the Hessian-normalized problem
    int gradient_iterations = 0;
    int polish_iterations = 0;
    bool converged = false;
};

/// Projected-gradient norm ||u - P(u - grad)||_inf, zero exactly at a KKT point.
double kkt_residual(const QpProblem& p, std::span<const double> u);

/// Nesterov-accelerated projected gradient followed by a primal active-set
/// polish. Throws NumericalError("nonconvex QP") if H has a negative eigenvalue
/// beyond tolerance.
QpResult solve_box_qp(const QpProblem& p, const QpOptions& options = {}, std::span<const double> warm_start = {});

}  // namespace koopwind
