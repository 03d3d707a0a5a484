#include "koopwind/plant.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "koopwind/random.hpp"

namespace koopwind {

double PlantConfig::rotor_area() const noexcept { return std::numbers::pi * 0.25 * diameter * diameter; }

std::size_t PlantConfig::delay_samples() const noexcept {
    return std::max<std::size_t>(1, std::size_t(std::llround(spacing / v_inf / dt)));
}

void PlantConfig::validate() const {
    require(v_inf > 0.0, "plant: v_inf must be positive");
    require(diameter > 0.0, "plant: diameter must be positive");
    require(spacing > 0.0, "plant: spacing must be positive");
    require(dt > 0.0, "plant: dt must be positive");
    require(tau > 0.0 && tau <= 1.0, "plant: tau must lie in (0, 1]");
    require(rho_a > 0.0, "plant: rho_a must be positive");
    require(n_r >= 1, "plant: n_r must be at least 1");
    require(k_w >= 0.0 && k_w <= 1.0, "plant: k_w must lie in [0, 1]");
    require(t_mix >= dt, "plant: t_mix must be at least dt");
    require(ct_max > 0.0, "plant: ct_max must be positive");
    require(cp_offset > -1.0, "plant: cp_offset must exceed -1");
    require(rotor_induction >= 0.0 && rotor_induction <= 1.0, "plant: rotor_induction must lie in [0, 1]");
    require(turbulence >= 0.0, "plant: turbulence must be nonnegative");
}

double axial_induction(double ct) noexcept { return ct / (4.0 + ct); }

double effective_wind_speed(const SegmentWinds& w, double gamma) {
    require(!w.vx.empty(), "effective_wind_speed: empty segment list");
    require(w.vx.size() == w.vy.size(), "effective_wind_speed: vx and vy lengths differ");
    double acc = 0.0;
    for (std::size_t j = 0; j < w.vx.size(); ++j) acc += w.vx[j] * w.vx[j] + w.vy[j] * w.vy[j];
    return std::cos(gamma) * std::sqrt(acc / double(w.vx.size()));
}

TurbineUpdate turbine_step(double power, double chat, double u_r, double ct, const PlantConfig& cfg) {
    require(u_r >= 0.0, "turbine_step: negative wind speed");
    const double t = cfg.tau;
    const double target = cfg.power_gain() * u_r * u_r * u_r * ct * (1.0 + cfg.cp_offset);
    return {(1.0 - t) * power + t * target, (1.0 - t) * chat + t * ct};
}

namespace {

// Rotor-averaged wind for a turbine whose undisturbed inflow is `inflow`.
double rotor_wind(PlantState& s, double inflow, double chat, const PlantConfig& cfg) {
    const double mean = inflow * (1.0 - cfg.rotor_induction * axial_induction(chat));
    if (cfg.turbulence == 0.0) return mean;
    SegmentWinds w{Vector(std::size_t(cfg.n_r)), Vector(std::size_t(cfg.n_r))};
    for (int j = 0; j < cfg.n_r; ++j) {
        w.vx[std::size_t(j)] = mean * (1.0 + cfg.turbulence * standard_normal(s.rng));
        w.vy[std::size_t(j)] = mean * cfg.turbulence * standard_normal(s.rng);
    }
    return std::clamp(effective_wind_speed(w, 0.0), 1e-6, cfg.v_inf);
}

void refresh_rotor_winds(PlantState& s, const PlantConfig& cfg) {
    for (std::size_t i = 0; i < kTurbines; ++i) s.u_r[i] = rotor_wind(s, s.inflow[i], s.chat[i], cfg);
}

double wake_target(double a, const PlantConfig& cfg) { return cfg.v_inf * (1.0 - 2.0 * a * (1.0 - cfg.k_w)); }

}  // namespace

PlantState make_state(const PlantConfig& cfg) {
    cfg.validate();
    PlantState s;
    s.inflow = {cfg.v_inf, cfg.v_inf};
    s.delay.assign(cfg.delay_samples(), 0.0);
    s.rng.seed(cfg.noise_seed);
    refresh_rotor_winds(s, cfg);
    return s;
}

PlantState settled_state(const PlantConfig& cfg, const TurbinePair& u) {
    PlantState s = make_state(cfg);
    const double a1 = axial_induction(std::clamp(u[0], 0.0, cfg.ct_max));
    std::fill(s.delay.begin(), s.delay.end(), a1);
    s.inflow[1] = wake_target(a1, cfg);
    for (std::size_t i = 0; i < kTurbines; ++i) {
        s.chat[i] = std::clamp(u[i], 0.0, cfg.ct_max);
        const double ur = s.inflow[i] * (1.0 - cfg.rotor_induction * axial_induction(s.chat[i]));
        s.power[i] = cfg.power_gain() * ur * ur * ur * s.chat[i] * (1.0 + cfg.cp_offset);
    }
    refresh_rotor_winds(s, cfg);
    return s;
}

double wake_step(PlantState& s, double ct1, const PlantConfig& cfg) {
    require(!s.delay.empty(), "wake_step: delay line not initialized");
    const double a_delayed = s.delay[s.head];
    s.delay[s.head] = axial_induction(std::clamp(ct1, 0.0, cfg.ct_max));
    s.head = (s.head + 1) % s.delay.size();
    s.inflow[1] += cfg.dt / cfg.t_mix * (wake_target(a_delayed, cfg) - s.inflow[1]);
    return s.inflow[1];
}

FarmOutputs farm_step(PlantState& s, TurbinePair u, const PlantConfig& cfg) {
    bool clamped = false;
    for (double& c : u) {
        if (!std::isfinite(c)) throw NumericalError("farm_step: non-finite thrust input");
        const double cc = std::clamp(c, 0.0, cfg.ct_max);
        clamped = clamped || cc != c;
        c = cc;
    }
    for (std::size_t i = 0; i < kTurbines; ++i) {
        const auto next = turbine_step(s.power[i], s.chat[i], s.u_r[i], u[i], cfg);
        s.power[i] = next.power;
        s.chat[i] = next.chat;
    }
    s.inflow[0] = cfg.v_inf;
    wake_step(s, u[0], cfg);
    refresh_rotor_winds(s, cfg);
    FarmOutputs out = observe(s);
    out.clamped = clamped;
    return out;
}

FarmOutputs observe(const PlantState& s) {
    FarmOutputs out;
    out.power = s.power;
    out.farm_power = s.power[0] + s.power[1];
    out.u_r = s.u_r;
    return out;
}

Matrix generate_excitation(std::size_t n, std::size_t channels, double lo, double hi, double cutoff_hz, double dt,
                           std::uint64_t seed) {
    require(n > 0, "generate_excitation: n must be positive");
    require(channels > 0, "generate_excitation: need at least one channel");
    require(lo < hi, "generate_excitation: lo must be below hi");
    require(dt > 0.0 && cutoff_hz > 0.0 && cutoff_hz < 0.5 / dt, "generate_excitation: cutoff must lie in (0, Nyquist)");
    std::mt19937_64 rng(seed);
    const double alpha = 1.0 - std::exp(-2.0 * std::numbers::pi * cutoff_hz * dt);
    // The low-pass shrinks the variance by alpha / (2 - alpha); scale the
    // deviation from the midpoint back up before clamping.
    const double gain = std::sqrt((2.0 - alpha) / alpha);
    const double mid = 0.5 * (lo + hi);
    Matrix out(channels, n);
    Vector y(channels);
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t c = 0; c < channels; ++c) {
            const double w = uniform(rng, lo, hi);
            y[c] = k == 0 ? mid + (w - mid) / gain : y[c] + alpha * (w - y[c]);
            out(c, k) = std::clamp(mid + gain * (y[c] - mid), lo, hi);
        }
    }
    return out;
}

Dataset simulate_openloop(const PlantConfig& cfg, const Matrix& inputs) {
    require(inputs.rows() == kTurbines, "simulate_openloop: inputs must have one row per turbine");
    require(inputs.cols() > 0, "simulate_openloop: inputs are empty");
    const TurbinePair mid{0.5 * cfg.ct_max, 0.5 * cfg.ct_max};
    PlantState s = settled_state(cfg, mid);
    for (std::size_t k = 0; k < 2 * cfg.delay_samples(); ++k) farm_step(s, mid, cfg);

    Dataset d;
    d.dt = cfg.dt;
    d.state_names = {"Ur1", "Ur2", "P1", "P2"};
    d.input_names = {"CT1", "CT2"};
    d.x = Matrix(4, inputs.cols());
    d.u = Matrix(2, inputs.cols());
    for (std::size_t k = 0; k < inputs.cols(); ++k) {
        const TurbinePair u{std::clamp(inputs(0, k), 0.0, cfg.ct_max), std::clamp(inputs(1, k), 0.0, cfg.ct_max)};
        d.x(0, k) = s.u_r[0];
        d.x(1, k) = s.u_r[1];
        d.x(2, k) = s.power[0];
        d.x(3, k) = s.power[1];
        d.u(0, k) = u[0];
        d.u(1, k) = u[1];
        farm_step(s, u, cfg);
    }
    return d;
}

double greedy_power(const PlantConfig& cfg) {
    PlantConfig quiet = cfg;
    quiet.turbulence = 0.0;
    PlantState s = make_state(quiet);
    const TurbinePair u{quiet.ct_max, quiet.ct_max};
    // The wake reaches turbine 2 only after the transport delay; do not
    // accept a plateau before it has had time to arrive and mix.
    const std::size_t min_steps = quiet.delay_samples() + std::size_t(5.0 * quiet.t_mix / quiet.dt);
    double last = observe(s).farm_power;
    int quiet_run = 0;
    for (std::size_t k = 0; k < 100000; ++k) {
        const double p = farm_step(s, u, quiet).farm_power;
        quiet_run = std::abs(p - last) < 1e-6 * std::abs(p) ? quiet_run + 1 : 0;
        last = p;
        if (k >= min_steps && quiet_run >= 50) return p;
    }
    throw NumericalError("greedy_power: no convergence within 1e5 steps");
}

}  // namespace koopwind
