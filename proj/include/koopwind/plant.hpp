#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "koopwind/dataset.hpp"
#include "koopwind/matrix.hpp"

namespace koopwind {

inline constexpr std::size_t kTurbines = 2;
using TurbinePair = std::array<double, kTurbines>;

struct PlantConfig {
    double v_inf = 8.0;          // m/s
    double diameter = 126.0;     // m
    double spacing = 5 * 126.0;  // m
    double dt = 1.0;             // s
    double tau = 0.3;
    double rho_a = 1.225;  // kg/m^3
    int n_r = 5;
    double k_w = 0.6;
    double t_mix = 20.0;  // s
    double ct_max = 2.0;
    double cp_offset = 0.0;  // epsilon, applied by the plant only
    // Fraction of the actuator-disc induction seen at the rotor itself:
    // U_r,i = inflow_i * (1 - rotor_induction * a(Chat_i)). Zero gives U_r1 = V_inf.
    double rotor_induction = 1.0;
    double turbulence = 0.0;  // relative std of per-segment wind fluctuations
    std::uint64_t noise_seed = 0;

    double rotor_area() const noexcept;
    /// round(spacing / v_inf / dt), at least one sample.
    std::size_t delay_samples() const noexcept;
    /// 0.5 * rho_a * A_r
    double power_gain() const noexcept { return 0.5 * rho_a * rotor_area(); }
    void validate() const;
};

struct PlantState {
    TurbinePair power{};    // W
    TurbinePair chat{};     // filtered thrust
    TurbinePair inflow{};   // undisturbed wind reaching each rotor, m/s
    TurbinePair u_r{};      // effective rotor wind, m/s
    std::vector<double> delay;  // upstream induction history, ring buffer
    std::size_t head = 0;
    std::mt19937_64 rng;
};

struct SegmentWinds {
    Vector vx;
    Vector vy;
};

struct FarmOutputs {
    TurbinePair power{};
    double farm_power = 0.0;
    TurbinePair u_r{};
    bool clamped = false;
};

double axial_induction(double ct) noexcept;

/// cos(gamma) * sqrt(mean(vx^2 + vy^2)).
double effective_wind_speed(const SegmentWinds& w, double gamma);

struct TurbineUpdate {
    double power;
    double chat;
};

/// One step of the first-order power and thrust filters.
TurbineUpdate turbine_step(double power, double chat, double u_r, double ct, const PlantConfig& cfg);

/// Turbines at rest, no wake, empty delay line.
PlantState make_state(const PlantConfig& cfg);

/// Exact equilibrium under constant input `u`.
PlantState settled_state(const PlantConfig& cfg, const TurbinePair& u);

/// Advances the wake delay line and the mixing lag; returns the new wake
/// inflow at turbine 2.
double wake_step(PlantState& s, double ct1, const PlantConfig& cfg);

/// Applies `u` (clamped to [0, ct_max]) for one sample. Outputs describe the
/// state after the step.
FarmOutputs farm_step(PlantState& s, TurbinePair u, const PlantConfig& cfg);

FarmOutputs observe(const PlantState& s);

/// Band-limited uniform noise: white noise on [lo, hi] through a first-order
/// low-pass with the given cutoff, rescaled about the midpoint to the white
/// noise variance and re-clamped. Returns channels x n.
Matrix generate_excitation(std::size_t n, std::size_t channels, double lo, double hi, double cutoff_hz,
                           double dt, std::uint64_t seed);

/// Records x_k = [Ur1, Ur2, P1, P2] and u_k. `inputs` is 2 x n.
Dataset simulate_openloop(const PlantConfig& cfg, const Matrix& inputs);

/// Settled farm power with both turbines at ct_max.
double greedy_power(const PlantConfig& cfg);

}  // namespace koopwind
