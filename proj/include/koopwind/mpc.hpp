#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "koopwind/koopman.hpp"
#include "koopwind/plant.hpp"
#include "koopwind/qp.hpp"

namespace koopwind {

/// How the qLMPC refreshes its lifted wind state each sample.
enum class WindUpdate {
    Reencode,   // encode the power-inverted wind estimates
    Propagate,  // advance the previous lifted state with the applied input
};

std::string to_string(WindUpdate w);
WindUpdate parse_wind_update(const std::string& name);

struct MpcConfig {
    std::size_t n_h = 10;
    double q = 1e-4;  // weight on squared farm-power error, W^-2
    double r = 1e-6;  // weight on squared thrust increments
    double u_lb = 0.0;
    double u_ub = 2.0;
    int schedule_iters = 2;
    std::optional<double> du_max;
    WindUpdate wind_update = WindUpdate::Reencode;
    double min_thrust = 1e-3;  // below this the power inversion is skipped
    QpOptions qp;

    void validate() const;
};

/// Stacked predictions y_{k+1..k+n_h} = lambda * x_k + s * [u_k; ...; u_{k+n_h-1}].
struct PredictionMatrices {
    Matrix lambda;  // (n_h n_y) x n_x
    Matrix s;       // (n_h n_y) x (n_h n_u)
};

PredictionMatrices build_toeplitz(const Matrix& a, const Matrix& b, const Matrix& c, std::size_t n_h);

/// Time-varying input matrix: b[j] multiplies u_{k+j}. The horizon is b.size().
PredictionMatrices build_toeplitz(const Matrix& a, const std::vector<Matrix>& b, const Matrix& c);

struct TurbineParameters {
    double tau = 0.3;
    double rho_a = 1.225;
    double rotor_area = 0.0;

    /// Nominal controller-side parameters; the plant's cp_offset is not seen.
    static TurbineParameters from(const PlantConfig& cfg);
    double power_gain() const noexcept { return 0.5 * rho_a * rotor_area; }
};

struct LinearModel {
    Matrix a, b, c;
};

/// Farm model with state [P1, Chat1, P2, Chat2], input [C_T1, C_T2] and output
/// P1 + P2, frozen at the rotor winds `u_r`.
LinearModel build_farm_qlpv(std::span<const double> u_r, const TurbineParameters& p);

/// Box QP for tracking `reference` (n_h values) with the predicted farm power
/// free + forced * U, penalizing input increments from `u_prev`.
QpProblem condense_qp(std::span<const double> free_response, const Matrix& forced,
                      std::span<const double> reference, const MpcConfig& cfg, std::span<const double> u_prev);

QpProblem condense_qp(const PredictionMatrices& pm, std::span<const double> x0, std::span<const double> reference,
                      const MpcConfig& cfg, std::span<const double> u_prev);

struct WindEstimate {
    double u_r = 0.0;
    bool valid = true;  // false: thrust too small to invert, `u_r` is the previous estimate
};

/// Steady-state inversion of the turbine power law.
WindEstimate estimate_wind_from_power(double power, double chat, const TurbineParameters& p, double previous,
                                      double min_thrust = 1e-3);

struct ControllerState {
    Vector u_prev;
    Vector g_current;
    TurbinePair ur_est{};
    TurbinePair p_measured{};
    TurbinePair chat{};         // controller-side replica of the thrust filter
    Matrix plan;                // n_u x n_h, last optimal input sequence
    std::vector<Vector> history;  // recent model states, oldest first
};

struct StepResult {
    TurbinePair u{};
    bool fault = false;
    std::string message;
    double kkt_residual = 0.0;
    int qp_iterations = 0;
};

/// Controller state at rest under constant input `u0` with wind guess `ur0`.
ControllerState initial_controller_state(const TurbinePair& u0, const TurbinePair& ur0, std::size_t n_h);

/// One qLMPC sample: wind estimate, wind-model rollout under the previous
/// plan, qLPV farm matrices along it, QP; repeated schedule_iters times.
StepResult qlmpc_step(ControllerState& cs, const KoopmanModel& wind_model, const TurbineParameters& turbine,
                      const TurbinePair& power, std::span<const double> reference, const MpcConfig& cfg);

/// Farm-power prediction of a Koopman model in watts and physical inputs:
/// P = free + forced * U for the lifted state g.
struct KoopmanPrediction {
    PredictionMatrices model;  // model units
    Matrix forced;             // W per unit thrust
    double out_scale = 1.0;
    double out_offset = 0.0;
    Vector input_shift;  // model-unit forced response of a zero physical input

    static KoopmanPrediction from(const KoopmanModel& m, std::size_t n_h);
    Vector free_response(std::span<const double> g) const;
};

/// One KMPC sample on a model whose single output is the farm power.
StepResult kmpc_step(ControllerState& cs, const KoopmanModel& power_model, const KoopmanPrediction& pred,
                     const TurbinePair& power, std::span<const double> reference, const MpcConfig& cfg);

class Controller {
public:
    virtual ~Controller() = default;
    virtual std::string name() const = 0;
    /// `reference` holds the targets for samples k+1..k+n_h.
    virtual StepResult step(const TurbinePair& power, std::span<const double> reference) = 0;
    virtual std::optional<TurbinePair> wind_estimate() const { return std::nullopt; }
    virtual std::size_t horizon() const = 0;
};

class QlmpcController : public Controller {
public:
    QlmpcController(KoopmanModel wind_model, TurbineParameters turbine, MpcConfig cfg, const TurbinePair& u0,
                    const TurbinePair& ur0, std::string name = "qlmpc_ae1");
    std::string name() const override { return name_; }
    StepResult step(const TurbinePair& power, std::span<const double> reference) override;
    std::optional<TurbinePair> wind_estimate() const override { return state_.ur_est; }
    std::size_t horizon() const override { return cfg_.n_h; }
    const ControllerState& state() const noexcept { return state_; }

private:
    KoopmanModel model_;
    TurbineParameters turbine_;
    MpcConfig cfg_;
    ControllerState state_;
    std::string name_;
};

class KmpcController : public Controller {
public:
    KmpcController(KoopmanModel power_model, MpcConfig cfg, const TurbinePair& u0, std::string name = "kmpc_ae2");
    std::string name() const override { return name_; }
    StepResult step(const TurbinePair& power, std::span<const double> reference) override;
    std::size_t horizon() const override { return cfg_.n_h; }
    const ControllerState& state() const noexcept { return state_; }

private:
    KoopmanModel model_;
    MpcConfig cfg_;
    KoopmanPrediction prediction_;
    ControllerState state_;
    std::string name_;
};

struct SimLog {
    std::vector<double> pref;
    std::vector<double> pwf;
    std::vector<TurbinePair> power;
    std::vector<TurbinePair> ct;
    std::vector<TurbinePair> ur_true;
    std::vector<TurbinePair> ur_est;  // NaN when the controller has no estimate
    std::vector<int> fault;

    std::size_t size() const noexcept { return pref.size(); }
};

/// Runs `steps` samples from `initial`. `reference` needs at least `steps`
/// values; targets beyond its end repeat the last one.
SimLog closed_loop(const PlantConfig& plant, PlantState initial, Controller& controller,
                   std::span<const double> reference, std::size_t steps);

void write_simlog(std::ostream& out, const SimLog& log);
void write_simlog(const std::string& path, const SimLog& log);
SimLog read_simlog(std::istream& in);
SimLog read_simlog(const std::string& path);

}  // namespace koopwind
