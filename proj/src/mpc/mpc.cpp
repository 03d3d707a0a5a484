#include "koopwind/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace koopwind {

std::string to_string(WindUpdate w) { return w == WindUpdate::Reencode ? "reencode" : "propagate"; }

WindUpdate parse_wind_update(const std::string& name) {
    if (name == "reencode") return WindUpdate::Reencode;
    if (name == "propagate") return WindUpdate::Propagate;
    throw UsageError("unknown wind update '" + name + "'");
}

void MpcConfig::validate() const {
    require(n_h >= 2, "mpc: n_h must be at least 2");
    require(q >= 0.0 && r >= 0.0 && q + r > 0.0, "mpc: weights must be nonnegative and not both zero");
    require(u_lb < u_ub, "mpc: u_lb must be below u_ub");
    require(schedule_iters >= 1, "mpc: schedule_iters must be positive");
    require(!du_max || *du_max > 0.0, "mpc: du_max must be positive");
    require(min_thrust > 0.0, "mpc: min_thrust must be positive");
}

PredictionMatrices build_toeplitz(const Matrix& a, const std::vector<Matrix>& b, const Matrix& c) {
    const std::size_t n_h = b.size();
    require(n_h >= 1, "build_toeplitz: empty horizon");
    const std::size_t n_x = a.rows(), n_u = b.front().cols(), n_y = c.rows();
    require(a.cols() == n_x && c.cols() == n_x, "build_toeplitz: dimension mismatch");
    for (const Matrix& bj : b) require(bj.rows() == n_x && bj.cols() == n_u, "build_toeplitz: dimension mismatch");

    // ca[p] = C A^p
    std::vector<Matrix> ca{c};
    for (std::size_t p = 1; p <= n_h; ++p) ca.push_back(ca.back() * a);

    PredictionMatrices pm{Matrix(n_h * n_y, n_x), Matrix(n_h * n_y, n_h * n_u)};
    for (std::size_t row = 0; row < n_h; ++row) {
        pm.lambda.set_block(row * n_y, 0, ca[row + 1]);
        for (std::size_t j = 0; j <= row; ++j) pm.s.set_block(row * n_y, j * n_u, ca[row - j] * b[j]);
    }
    return pm;
}

PredictionMatrices build_toeplitz(const Matrix& a, const Matrix& b, const Matrix& c, std::size_t n_h) {
    return build_toeplitz(a, std::vector<Matrix>(n_h, b), c);
}

TurbineParameters TurbineParameters::from(const PlantConfig& cfg) { return {cfg.tau, cfg.rho_a, cfg.rotor_area()}; }

LinearModel build_farm_qlpv(std::span<const double> u_r, const TurbineParameters& p) {
    const std::size_t n_t = u_r.size();
    LinearModel m{Matrix::identity(2 * n_t) * (1.0 - p.tau), Matrix(2 * n_t, n_t), Matrix(1, 2 * n_t)};
    for (std::size_t i = 0; i < n_t; ++i) {
        require(u_r[i] > 0.0, "build_farm_qlpv: wind speeds must be positive");
        m.b(2 * i, i) = p.tau * p.power_gain() * u_r[i] * u_r[i] * u_r[i];
        m.b(2 * i + 1, i) = p.tau;
        m.c(0, 2 * i) = 1.0;
    }
    return m;
}

QpProblem condense_qp(std::span<const double> free_response, const Matrix& forced,
                      std::span<const double> reference, const MpcConfig& cfg, std::span<const double> u_prev) {
    cfg.validate();
    const std::size_t rows = forced.rows(), n = forced.cols();
    if (free_response.size() != rows || reference.size() != rows || u_prev.empty() || n % u_prev.size() != 0)
        throw UsageError("condense_qp: dimension mismatch");
    const std::size_t n_u = u_prev.size();

    // 1/2 ||M U - v||^2 with M = [sqrt(2q) S; sqrt(2r) D], v = [sqrt(2q)(ref - free); sqrt(2r) d0]
    const double wq = std::sqrt(2.0 * cfg.q), wr = std::sqrt(2.0 * cfg.r);
    LeastSquaresForm ls{Matrix(rows + n, n), Vector(rows + n, 0.0)};
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < n; ++j) ls.m(i, j) = wq * forced(i, j);
        ls.r[i] = wq * (reference[i] - free_response[i]);
    }
    for (std::size_t j = 0; j < n; ++j) {
        ls.m(rows + j, j) = wr;
        if (j >= n_u) ls.m(rows + j, j - n_u) = -wr;
    }
    for (std::size_t i = 0; i < n_u; ++i) ls.r[rows + i] = wr * u_prev[i];

    Vector lo(n), hi(n);
    for (std::size_t j = 0; j < n; ++j) {
        lo[j] = cfg.u_lb;
        hi[j] = cfg.u_ub;
        if (cfg.du_max) {
            const double reach = double(j / n_u + 1) * *cfg.du_max;
            const double anchor = std::clamp(u_prev[j % n_u], cfg.u_lb, cfg.u_ub);
            lo[j] = std::max(lo[j], anchor - reach);
            hi[j] = std::min(hi[j], anchor + reach);
        }
    }
    return QpProblem::from_least_squares(std::move(ls), std::move(lo), std::move(hi));
}

QpProblem condense_qp(const PredictionMatrices& pm, std::span<const double> x0, std::span<const double> reference,
                      const MpcConfig& cfg, std::span<const double> u_prev) {
    if (x0.size() != pm.lambda.cols()) throw UsageError("condense_qp: dimension mismatch");
    return condense_qp(pm.lambda * x0, pm.s, reference, cfg, u_prev);
}

WindEstimate estimate_wind_from_power(double power, double chat, const TurbineParameters& p, double previous,
                                      double min_thrust) {
    require(power >= 0.0, "estimate_wind_from_power: negative power");
    if (!(chat > min_thrust)) return {previous, false};
    return {std::cbrt(power / (p.power_gain() * chat)), true};
}

ControllerState initial_controller_state(const TurbinePair& u0, const TurbinePair& ur0, std::size_t n_h) {
    ControllerState cs;
    cs.u_prev.assign(u0.begin(), u0.end());
    cs.ur_est = ur0;
    cs.chat = u0;
    cs.plan = Matrix(kTurbines, n_h);
    for (std::size_t j = 0; j < n_h; ++j) cs.plan.set_column(j, cs.u_prev);
    return cs;
}

namespace {

Vector flatten_plan(const Matrix& plan) {
    Vector v(plan.size());
    for (std::size_t j = 0; j < plan.cols(); ++j)
        for (std::size_t i = 0; i < plan.rows(); ++i) v[j * plan.rows() + i] = plan(i, j);
    return v;
}

Matrix unflatten_plan(const Vector& v, std::size_t n_u) {
    Matrix plan(n_u, v.size() / n_u);
    for (std::size_t j = 0; j < plan.cols(); ++j)
        for (std::size_t i = 0; i < n_u; ++i) plan(i, j) = v[j * n_u + i];
    return plan;
}

void shift_plan(Matrix& plan) {
    for (std::size_t j = 0; j + 1 < plan.cols(); ++j) plan.set_column(j, plan.column_vector(j + 1));
}

// Lifted state of the newest entry of `history`, evaluated causally.
Vector lift_history(const KoopmanModel& m, const std::vector<Vector>& history) {
    Matrix x(m.n_x(), history.size());
    for (std::size_t k = 0; k < history.size(); ++k) x.set_column(k, m.state_scaling.normalize(history[k]));
    return m.lifting.lift_sequence(x).column_vector(history.size() - 1);
}

void remember(std::vector<Vector>& history, Vector x, std::size_t keep) {
    history.push_back(std::move(x));
    if (history.size() > keep) history.erase(history.begin(), history.end() - std::ptrdiff_t(keep));
}

// Solves and records the plan; false on failure.
bool solve_into(ControllerState& cs, const QpProblem& qp, const MpcConfig& cfg, StepResult& out) {
    try {
        const QpResult res = solve_box_qp(qp, cfg.qp, flatten_plan(cs.plan));
        out.kkt_residual = res.kkt_residual_scaled;
        out.qp_iterations += res.gradient_iterations + res.polish_iterations;
        if (!res.converged) {
            out.message = "QP did not converge";
            return false;
        }
        cs.plan = unflatten_plan(res.u, cs.u_prev.size());
        return true;
    } catch (const NumericalError& e) {
        out.message = e.what();
        return false;
    }
}

void finish_step(ControllerState& cs, StepResult& out, const TurbineParameters* turbine) {
    if (out.fault) {
        for (std::size_t i = 0; i < kTurbines; ++i) out.u[i] = cs.u_prev[i];
        for (std::size_t j = 0; j < cs.plan.cols(); ++j) cs.plan.set_column(j, cs.u_prev);
    } else {
        for (std::size_t i = 0; i < kTurbines; ++i) out.u[i] = cs.plan(i, 0);
    }
    cs.u_prev.assign(out.u.begin(), out.u.end());
    if (turbine)
        for (std::size_t i = 0; i < kTurbines; ++i) cs.chat[i] = (1.0 - turbine->tau) * cs.chat[i] + turbine->tau * out.u[i];
}

}  // namespace

StepResult qlmpc_step(ControllerState& cs, const KoopmanModel& wind_model, const TurbineParameters& turbine,
                      const TurbinePair& power, std::span<const double> reference, const MpcConfig& cfg) {
    cfg.validate();
    require(wind_model.n_x() == kTurbines && wind_model.n_y() == kTurbines && wind_model.n_u() == kTurbines,
            "qlmpc_step: wind model must map [C_T1, C_T2] to [U_r1, U_r2]");
    require(reference.size() == cfg.n_h, "qlmpc_step: reference must cover the horizon");
    require(cs.plan.cols() == cfg.n_h, "qlmpc_step: controller state has a different horizon");
    StepResult out;
    cs.p_measured = power;

    Vector g;
    if (cfg.wind_update == WindUpdate::Reencode || cs.g_current.empty()) {
        for (std::size_t i = 0; i < kTurbines; ++i) {
            const WindEstimate e =
                estimate_wind_from_power(std::max(power[i], 0.0), cs.chat[i], turbine, cs.ur_est[i], cfg.min_thrust);
            cs.ur_est[i] = e.u_r;
            if (!e.valid) out.message = "thrust too small to invert";
        }
        remember(cs.history, Vector(cs.ur_est.begin(), cs.ur_est.end()), wind_model.lifting.history());
        g = lift_history(wind_model, cs.history);
    } else {
        g = cs.g_current;
        const Vector y = wind_model.decode(g);
        for (std::size_t i = 0; i < kTurbines; ++i) cs.ur_est[i] = y[i];
    }
    cs.g_current = g;

    shift_plan(cs.plan);
    const Vector x0{power[0], cs.chat[0], power[1], cs.chat[1]};
    const double floor = 1e-3;
    for (int it = 0; it < cfg.schedule_iters && !out.fault; ++it) {
        std::vector<Matrix> bs;
        Matrix a, c;
        Vector gj = g;
        TurbinePair ur = cs.ur_est;
        for (std::size_t j = 0; j < cfg.n_h; ++j) {
            if (j > 0) {
                gj = wind_model.advance(gj, cs.plan.column_vector(j - 1));
                const Vector y = wind_model.decode(gj);
                for (std::size_t i = 0; i < kTurbines; ++i) ur[i] = y[i];
            }
            for (double& v : ur) v = std::max(v, floor);
            LinearModel lm = build_farm_qlpv(ur, turbine);
            bs.push_back(std::move(lm.b));
            if (j == 0) {
                a = std::move(lm.a);
                c = std::move(lm.c);
            }
        }
        const PredictionMatrices pm = build_toeplitz(a, bs, c);
        out.fault = !solve_into(cs, condense_qp(pm, x0, reference, cfg, cs.u_prev), cfg, out);
    }
    finish_step(cs, out, &turbine);
    if (cfg.wind_update == WindUpdate::Propagate) cs.g_current = wind_model.advance(g, cs.u_prev);
    return out;
}

KoopmanPrediction KoopmanPrediction::from(const KoopmanModel& m, std::size_t n_h) {
    m.validate();
    require(m.n_y() == 1, "kmpc: model must have a single farm-power output");
    KoopmanPrediction p;
    p.model = build_toeplitz(m.a, m.b, m.c, n_h);
    p.out_scale = m.output_scaling.scale[0];
    p.out_offset = m.output_scaling.offset[0];
    const std::size_t n_u = m.n_u();
    p.forced = p.model.s;
    Vector shift(n_h * n_u);
    for (std::size_t j = 0; j < shift.size(); ++j) {
        const std::size_t ch = j % n_u;
        shift[j] = m.input_scaling.offset[ch] / m.input_scaling.scale[ch];
        for (std::size_t i = 0; i < p.forced.rows(); ++i) p.forced(i, j) *= p.out_scale / m.input_scaling.scale[ch];
    }
    p.input_shift = p.model.s * shift;
    return p;
}

Vector KoopmanPrediction::free_response(std::span<const double> g) const {
    Vector f = model.lambda * g;
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = out_offset + out_scale * (f[i] - input_shift[i]);
    return f;
}

StepResult kmpc_step(ControllerState& cs, const KoopmanModel& power_model, const KoopmanPrediction& pred,
                     const TurbinePair& power, std::span<const double> reference, const MpcConfig& cfg) {
    cfg.validate();
    require(power_model.n_x() == kTurbines && power_model.n_u() == kTurbines,
            "kmpc_step: model must be driven by [P1, P2] and [C_T1, C_T2]");
    require(reference.size() == cfg.n_h && pred.model.lambda.rows() == cfg.n_h,
            "kmpc_step: reference and prediction must cover the horizon");
    StepResult out;
    cs.p_measured = power;
    remember(cs.history, Vector(power.begin(), power.end()), power_model.lifting.history());
    cs.g_current = lift_history(power_model, cs.history);
    shift_plan(cs.plan);
    out.fault = !solve_into(cs, condense_qp(pred.free_response(cs.g_current), pred.forced, reference, cfg, cs.u_prev),
                            cfg, out);
    finish_step(cs, out, nullptr);
    return out;
}

QlmpcController::QlmpcController(KoopmanModel wind_model, TurbineParameters turbine, MpcConfig cfg,
                                 const TurbinePair& u0, const TurbinePair& ur0, std::string name)
    : model_(std::move(wind_model)), turbine_(turbine), cfg_(std::move(cfg)),
      state_(initial_controller_state(u0, ur0, cfg_.n_h)), name_(std::move(name)) {
    cfg_.validate();
    model_.validate();
}

StepResult QlmpcController::step(const TurbinePair& power, std::span<const double> reference) {
    return qlmpc_step(state_, model_, turbine_, power, reference, cfg_);
}

KmpcController::KmpcController(KoopmanModel power_model, MpcConfig cfg, const TurbinePair& u0, std::string name)
    : model_(std::move(power_model)), cfg_(std::move(cfg)), prediction_(KoopmanPrediction::from(model_, cfg_.n_h)),
      state_(initial_controller_state(u0, {0.0, 0.0}, cfg_.n_h)), name_(std::move(name)) {
    cfg_.validate();
}

StepResult KmpcController::step(const TurbinePair& power, std::span<const double> reference) {
    return kmpc_step(state_, model_, prediction_, power, reference, cfg_);
}

SimLog closed_loop(const PlantConfig& plant, PlantState initial, Controller& controller,
                   std::span<const double> reference, std::size_t steps) {
    plant.validate();
    require(reference.size() >= steps && !reference.empty(), "closed_loop: reference shorter than the run");
    const std::size_t n_h = controller.horizon();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    SimLog log;
    PlantState s = std::move(initial);
    Vector window(n_h);
    for (std::size_t k = 0; k < steps; ++k) {
        const FarmOutputs now = observe(s);
        for (std::size_t j = 0; j < n_h; ++j) window[j] = reference[std::min(k + 1 + j, reference.size() - 1)];
        const StepResult r = controller.step(now.power, window);
        log.pref.push_back(reference[k]);
        log.pwf.push_back(now.farm_power);
        log.power.push_back(now.power);
        log.ct.push_back(r.u);
        log.ur_true.push_back(now.u_r);
        log.ur_est.push_back(controller.wind_estimate().value_or(TurbinePair{nan, nan}));
        log.fault.push_back(r.fault ? 1 : 0);
        farm_step(s, r.u, plant);
    }
    return log;
}

void write_simlog(std::ostream& out, const SimLog& log) {
    out << "k,Pref,PWF,P1,P2,CT1,CT2,Ur1_true,Ur2_true,Ur1_est,Ur2_est,fault\n";
    char buf[512];
    for (std::size_t k = 0; k < log.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", k,
                      log.pref[k], log.pwf[k], log.power[k][0], log.power[k][1], log.ct[k][0], log.ct[k][1],
                      log.ur_true[k][0], log.ur_true[k][1], log.ur_est[k][0], log.ur_est[k][1], log.fault[k]);
        out << buf;
    }
}

void write_simlog(const std::string& path, const SimLog& log) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw UsageError("cannot open '" + path + "' for writing");
    write_simlog(f, log);
}

SimLog read_simlog(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("k,Pref,PWF", 0) != 0) throw UsageError("simlog: missing header");
    SimLog log;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> v;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) v.push_back(std::strtod(cell.c_str(), nullptr));
        if (v.size() != 12) throw UsageError("simlog: expected 12 columns");
        log.pref.push_back(v[1]);
        log.pwf.push_back(v[2]);
        log.power.push_back({v[3], v[4]});
        log.ct.push_back({v[5], v[6]});
        log.ur_true.push_back({v[7], v[8]});
        log.ur_est.push_back({v[9], v[10]});
        log.fault.push_back(int(v[11]));
    }
    return log;
}

SimLog read_simlog(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw UsageError("cannot open '" + path + "'");
    return read_simlog(f);
}

}  // namespace koopwind
