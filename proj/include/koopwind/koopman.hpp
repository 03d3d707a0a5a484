#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "koopwind/dataset.hpp"
#include "koopwind/matrix.hpp"
#include "koopwind/network.hpp"

namespace koopwind {

/// Per-channel affine map to model coordinates: n = (v - offset) / scale.
struct Scaling {
    Vector offset;
    Vector scale;

    static Scaling identity(std::size_t n);
    /// Zero mean, unit variance per row.
    static Scaling standardize(const Matrix& rows);

    std::size_t size() const noexcept { return offset.size(); }
    Vector normalize(std::span<const double> v) const;
    Vector denormalize(std::span<const double> v) const;
    Matrix normalize_rows(const Matrix& m) const;
    Matrix denormalize_rows(const Matrix& m) const;

    friend bool operator==(const Scaling&, const Scaling&) = default;
};

enum class LiftingKind { Identity, Affine, Encoder, Physical };

std::string to_string(LiftingKind k);
LiftingKind parse_lifting_kind(const std::string& name);

/// g: R^{n_x} -> R^{n_g}, evaluated on normalized states.
struct Lifting {
    LiftingKind kind = LiftingKind::Identity;
    std::size_t n_x = 0;
    bool include_state = false;        // encoder: g = [x; enc(x)]
    Network encoder;                   // encoder kind only
    std::vector<std::size_t> windows;  // physical kind: moving-average lengths

    static Lifting identity(std::size_t n_x);
    static Lifting affine(std::size_t n_x);
    static Lifting encoder_lifting(Network net, bool include_state);
    /// x, x^2, x^3, cross products, moving averages of x and x^3, constant.
    static Lifting physical(std::size_t n_x, std::vector<std::size_t> windows);

    std::size_t n_g() const;
    /// Samples of history a causal evaluation consumes (1 for memoryless kinds).
    std::size_t history() const;

    /// Memoryless evaluation. For the physical kind the history is taken as
    /// constant at x.
    Vector operator()(std::span<const double> x) const;

    /// Causal evaluation of every column of `x` (n_x x n). Moving averages use
    /// the available prefix at the start of the sequence.
    Matrix lift_sequence(const Matrix& x) const;
};

struct KoopmanModel {
    Matrix a;  // n_g x n_g
    Matrix b;  // n_g x n_u
    Matrix c;  // n_y x n_g
    Lifting lifting;
    Scaling state_scaling;
    Scaling input_scaling;
    Scaling output_scaling;
    std::vector<std::string> state_names;
    std::vector<std::string> input_names;
    std::vector<std::string> output_names;
    double spectral_radius = 0.0;

    std::size_t n_g() const noexcept { return a.rows(); }
    std::size_t n_u() const noexcept { return b.cols(); }
    std::size_t n_y() const noexcept { return c.rows(); }
    std::size_t n_x() const noexcept { return lifting.n_x; }

    void validate() const;

    /// Lifted state of a physical state vector.
    Vector encode(std::span<const double> x) const;
    /// Physical outputs of a lifted state.
    Vector decode(std::span<const double> g) const;
    /// One step with physical inputs.
    Vector advance(std::span<const double> g, std::span<const double> u) const;
};

struct SnapshotMatrices {
    Matrix g_u;     // [g(x_k); u_k], k = 0..n_o-2
    Matrix g_plus;  // g(x_{k+1})
    Matrix x_plus;  // outputs at k+1
    Matrix x_now;   // outputs at k, for reconstruction-style C
};

/// Columns of `lifted`, `inputs`, `outputs` are samples 0..n_o-1.
SnapshotMatrices build_snapshot_matrices(const Matrix& lifted, const Matrix& inputs, const Matrix& outputs);

/// Lifts the dataset states (unnormalized) and selects output channels.
SnapshotMatrices build_snapshot_matrices(const Dataset& d, const Lifting& lift, const std::vector<std::string>& outputs);

enum class OutputFit { NextState, CurrentState };

struct EdmdOptions {
    double pinv_tol = 1e-10;
    double ridge_condition = 1e10;  // refit with Tikhonov above this cond(G_u)
    OutputFit output_fit = OutputFit::NextState;
};

struct EdmdResult {
    Matrix a, b, c;
    double residual_k = 0.0;  // ||G_+ - K G_u||_F
    double residual_c = 0.0;  // ||X_+ - C G_+||_F
    double condition = 0.0;   // cond(G_u)
    bool ridge = false;
};

EdmdResult edmd_fit(const SnapshotMatrices& m, const EdmdOptions& options = {});

/// K = [A B] minimizing ||G_+ - K G_u||_F, with the ridge fallback.
Matrix edmd_operator(const Matrix& g_u, const Matrix& g_plus, const EdmdOptions& options, double* condition = nullptr,
                     bool* ridge = nullptr);

/// Gelfand-formula estimate of max |eig(A)|.
double spectral_radius(const Matrix& a);

struct Rollout {
    Matrix g;  // n_g x (N_p + 1), column i = g_{k+i}
    Matrix y;  // n_y x (N_p + 1)
};

/// Iterated one-step prediction; `inputs` is n_u x N_p in model units.
Rollout rollout(const Matrix& a, const Matrix& b, const Matrix& c, std::span<const double> g0, const Matrix& inputs);

/// Same prediction from A^i g0 + sum A^{i-1-j} B u_j.
Rollout rollout_powered(const Matrix& a, const Matrix& b, const Matrix& c, std::span<const double> g0,
                        const Matrix& inputs);

/// Variance accounted for, percent, clamped at 0.
double vaf(std::span<const double> y, std::span<const double> yhat);

/// Named series from a dataset; "PWF" is P1 + P2.
Vector output_series(const Dataset& d, const std::string& name);
Matrix output_matrix(const Dataset& d, const std::vector<std::string>& names);

/// Open-loop simulation of the model over samples [begin, end) of `d`, with
/// the initial lifted state taken from the measured state (and its history)
/// at `begin`. Returns physical outputs, n_y x (end - begin).
Matrix simulate_model(const KoopmanModel& m, const Dataset& d, std::size_t begin, std::size_t end);

/// VAF per output channel of simulate_model against the measured outputs.
std::vector<double> evaluate_vaf(const KoopmanModel& m, const Dataset& d, std::size_t begin, std::size_t end);

struct EdmdIdentification {
    KoopmanModel model;
    EdmdResult fit;
};

/// Fits an EDMD model. With `normalize` the states, inputs and outputs are
/// standardized first; the lifting then needs a constant feature (affine,
/// physical) to represent the shifted dynamics exactly.
EdmdIdentification identify_edmd(const Dataset& d, const Lifting& lift, const std::vector<std::string>& outputs,
                                 bool normalize, const EdmdOptions& options = {});

void write_model(std::ostream& out, const KoopmanModel& m);
void write_model(const std::string& path, const KoopmanModel& m);
KoopmanModel read_model(std::istream& in);
KoopmanModel read_model(const std::string& path);

}  // namespace koopwind
