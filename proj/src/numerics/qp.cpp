#include "koopwind/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "koopwind/linalg.hpp"

namespace koopwind {
namespace {

void check_finite(std::span<const double> v, const char* what) {
    for (double x : v)
        if (std::isnan(x)) throw NumericalError(std::string("QP ") + what + " contains NaN");
}

double clamp_to(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

struct Normalized {
    Matrix h;
    Vector f;
    std::optional<LeastSquaresForm> factor;
    double scale = 1.0;
};

Normalized normalize(const QpProblem& p) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.dimension(); ++i) s = std::max(s, std::abs(p.hessian()(i, i)));
    if (s == 0.0) s = std::max(1.0, norm_inf(p.linear()));
    Normalized n{p.hessian() * (1.0 / s), p.linear(), std::nullopt, s};
    for (double& v : n.f) v /= s;
    if (p.factor()) {
        const double root = 1.0 / std::sqrt(s);
        n.factor = LeastSquaresForm{p.factor()->m * root, p.factor()->r};
        for (double& v : n.factor->r) v *= root;
    }
    return n;
}

Vector grad(const Matrix& h, const Vector& f, std::span<const double> u) {
    Vector g = h * u;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += f[i];
    return g;
}

double kkt(const Matrix& h, const Vector& f, const Vector& lo, const Vector& hi, std::span<const double> u) {
    const Vector g = grad(h, f, u);
    double r = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) r = std::max(r, std::abs(u[i] - clamp_to(u[i] - g[i], lo[i], hi[i])));
    return r;
}

enum class Bound : unsigned char { Free, Lower, Upper };

// Minimizer of the quadratic over the free set with the others fixed, or a
// zero-curvature descent ray when the reduced Hessian is singular along the
// gradient. Returns (direction, is_ray).
std::pair<Vector, bool> free_step(const Normalized& q, const std::vector<Bound>& state, const Vector& u,
                                  const Vector& g) {
    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < u.size(); ++i)
        if (state[i] == Bound::Free) free.push_back(i);
    Vector d(u.size(), 0.0);
    if (free.empty()) return {d, false};
    const std::size_t nf = free.size();

    if (q.factor) {
        const Matrix& m = q.factor->m;
        Matrix mf(m.rows(), nf);
        Vector rhs = q.factor->r;
        for (std::size_t r = 0; r < m.rows(); ++r) {
            for (std::size_t i = 0; i < u.size(); ++i)
                if (state[i] != Bound::Free) rhs[r] -= m(r, i) * u[i];
            for (std::size_t k = 0; k < nf; ++k) mf(r, k) = m(r, free[k]);
        }
        const Vector uf = least_squares(mf, rhs);
        for (std::size_t k = 0; k < nf; ++k) d[free[k]] = uf[k] - u[free[k]];
        return {d, false};
    }

    Matrix hf(nf, nf);
    Vector gf(nf);
    for (std::size_t a = 0; a < nf; ++a) {
        gf[a] = g[free[a]];
        for (std::size_t b = 0; b < nf; ++b) hf(a, b) = q.h(free[a], free[b]);
    }
    if (auto l = cholesky(hf)) {
        // Accept only well-conditioned factors; otherwise use the eigen route.
        double dmin = std::numeric_limits<double>::infinity();
        double dmax = 0.0;
        for (std::size_t i = 0; i < nf; ++i) {
            dmin = std::min(dmin, (*l)(i, i));
            dmax = std::max(dmax, (*l)(i, i));
        }
        if (dmin > 1e-7 * dmax) {
            const Vector step = cholesky_solve(*l, gf);
            for (std::size_t k = 0; k < nf; ++k) d[free[k]] = -step[k];
            return {d, false};
        }
    }
    const SymEigen e = sym_eigen(hf);
    const double lmax = std::max(std::abs(e.values.back()), 1e-300);
    const double cut = 1e-12 * lmax;
    Vector null_part(nf, 0.0);
    Vector newton(nf, 0.0);
    for (std::size_t k = 0; k < nf; ++k) {
        double c = 0.0;
        for (std::size_t i = 0; i < nf; ++i) c += e.vectors(i, k) * gf[i];
        for (std::size_t i = 0; i < nf; ++i) {
            if (e.values[k] > cut) newton[i] -= c / e.values[k] * e.vectors(i, k);
            else null_part[i] -= c * e.vectors(i, k);
        }
    }
    const bool ray = norm2(null_part) > 1e-12 * (1.0 + norm2(gf));
    const Vector& chosen = ray ? null_part : newton;
    for (std::size_t k = 0; k < nf; ++k) d[free[k]] = chosen[k];
    return {d, ray};
}

}  // namespace

QpProblem::QpProblem(Matrix hessian, Vector linear, Vector lower, Vector upper)
    : linear_(std::move(linear)), lower_(std::move(lower)), upper_(std::move(upper)) {
    const std::size_t n = linear_.size();
    require(n > 0, "QP must have at least one variable");
    require(hessian.rows() == n && hessian.cols() == n, "QP Hessian shape mismatch");
    require(lower_.size() == n && upper_.size() == n, "QP bound length mismatch");
    check_finite(hessian.values(), "Hessian");
    check_finite(linear_, "linear term");
    check_finite(lower_, "lower bound");
    check_finite(upper_, "upper bound");
    const double scale = std::max(1.0, hessian.max_abs());
    for (std::size_t i = 0; i < n; ++i) {
        require(lower_[i] <= upper_[i], "QP bounds must satisfy lower <= upper");
        for (std::size_t j = i + 1; j < n; ++j)
            require(std::abs(hessian(i, j) - hessian(j, i)) <= 1e-9 * scale, "QP Hessian is not symmetric");
    }
    hessian_ = symmetrized(hessian);
}

QpProblem QpProblem::from_least_squares(LeastSquaresForm form, Vector lower, Vector upper) {
    require(form.m.rows() == form.r.size(), "least-squares form shape mismatch");
    Matrix h;
    gemm(1.0, form.m, Trans::Yes, form.m, Trans::No, 0.0, h);
    Vector f = transpose_times(form.m, form.r);
    for (double& v : f) v = -v;
    QpProblem p(std::move(h), std::move(f), std::move(lower), std::move(upper));
    p.factor_ = std::move(form);
    return p;
}

double QpProblem::objective(std::span<const double> u) const {
    const Vector hu = hessian_ * u;
    return 0.5 * dot(u, hu) + dot(linear_, u);
}

Vector QpProblem::gradient(std::span<const double> u) const { return grad(hessian_, linear_, u); }

double kkt_residual(const QpProblem& p, std::span<const double> u) {
    return kkt(p.hessian(), p.linear(), p.lower(), p.upper(), u);
}

QpResult solve_box_qp(const QpProblem& p, const QpOptions& options, std::span<const double> warm_start) {
    const std::size_t n = p.dimension();
    const Normalized q = normalize(p);
    const Vector& lo = p.lower();
    const Vector& hi = p.upper();

    double lipschitz = 0.0;
    if (!q.factor) {
        const SymEigen e = sym_eigen(q.h);
        const double lmax = std::max(e.values.back(), 0.0);
        if (e.values.front() < -1e-9 * std::max(1.0, lmax)) throw NumericalError("nonconvex QP");
        lipschitz = lmax;
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < n; ++j) row += std::abs(q.h(i, j));
            lipschitz = std::max(lipschitz, row);
        }
    }

    QpResult res;
    Vector x(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double start = warm_start.size() == n ? warm_start[i] : 0.0;
        x[i] = clamp_to(start, lo[i], hi[i]);
    }

    // Accelerated projected gradient with gradient-based restart.
    if (lipschitz > 0.0) {
        const double step = 1.0 / lipschitz;
        Vector y = x;
        Vector x_prev = x;
        double t = 1.0;
        int stable = 0;
        std::vector<Bound> last(n, Bound::Free);
        for (int it = 0; it < options.max_iterations; ++it) {
            const Vector g = grad(q.h, q.f, y);
            x_prev = x;
            for (std::size_t i = 0; i < n; ++i) x[i] = clamp_to(y[i] - step * g[i], lo[i], hi[i]);
            res.gradient_iterations = it + 1;
            if (kkt(q.h, q.f, lo, hi, x) < options.tolerance) break;
            std::vector<Bound> now(n);
            for (std::size_t i = 0; i < n; ++i)
                now[i] = x[i] == lo[i] ? Bound::Lower : (x[i] == hi[i] ? Bound::Upper : Bound::Free);
            stable = now == last ? stable + 1 : 0;
            last = std::move(now);
            if (stable >= options.stall_window) break;
            const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
            double restart = 0.0;
            for (std::size_t i = 0; i < n; ++i) restart += (y[i] - x[i]) * (x[i] - x_prev[i]);
            if (restart > 0.0) {
                t = 1.0;
                y = x;
            } else {
                const double beta = (t - 1.0) / t_next;
                for (std::size_t i = 0; i < n; ++i) y[i] = x[i] + beta * (x[i] - x_prev[i]);
                t = t_next;
            }
        }
    }

    // Primal active-set polish, started from the PG iterate.
    std::vector<Bound> state(n, Bound::Free);
    for (std::size_t i = 0; i < n; ++i) {
        const double span = hi[i] - lo[i];
        if (x[i] - lo[i] <= 1e-12 * span) { x[i] = lo[i]; state[i] = Bound::Lower; }
        else if (hi[i] - x[i] <= 1e-12 * span) { x[i] = hi[i]; state[i] = Bound::Upper; }
    }
    const double mult_tol = 1e-12 * (1.0 + norm_inf(q.f));
    const int max_polish = static_cast<int>(10 * n + 50);
    for (int it = 0; it < max_polish; ++it) {
        res.polish_iterations = it + 1;
        Vector g = grad(q.h, q.f, x);
        auto [d, ray] = free_step(q, state, x, g);
        double alpha = ray ? std::numeric_limits<double>::infinity() : 1.0;
        std::size_t blocking = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (state[i] != Bound::Free || d[i] == 0.0) continue;
            const double limit = d[i] > 0.0 ? (hi[i] - x[i]) / d[i] : (lo[i] - x[i]) / d[i];
            if (limit < alpha) {
                alpha = limit;
                blocking = i;
            }
        }
        if (!std::isfinite(alpha)) throw NumericalError("QP unbounded below");
        for (std::size_t i = 0; i < n; ++i)
            if (state[i] == Bound::Free) x[i] = clamp_to(x[i] + alpha * d[i], lo[i], hi[i]);
        if (blocking < n) {
            state[blocking] = d[blocking] > 0.0 ? Bound::Upper : Bound::Lower;
            x[blocking] = state[blocking] == Bound::Upper ? hi[blocking] : lo[blocking];
            continue;
        }
        // Full step reached the subspace minimizer: check multipliers.
        g = grad(q.h, q.f, x);
        std::size_t worst = n;
        double worst_val = mult_tol;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = state[i] == Bound::Lower ? -g[i] : (state[i] == Bound::Upper ? g[i] : 0.0);
            if (v > worst_val) {
                worst_val = v;
                worst = i;
            }
        }
        if (worst == n) break;
        state[worst] = Bound::Free;
    }

    res.u = x;
    res.kkt_residual_scaled = kkt(q.h, q.f, lo, hi, x);
    res.kkt_residual = kkt_residual(p, x);
    res.objective = p.objective(x);
    res.converged = res.kkt_residual_scaled <= std::max(options.tolerance, 1e-9);
    return res;
}

}  // namespace koopwind
