#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "koopwind/dataset.hpp"
#include "koopwind/koopman.hpp"
#include "koopwind/network.hpp"

namespace koopwind {

enum class Optimizer { Sgd, Adam };

struct TrainingConfig {
    double eta = 1e-3;
    int epochs = 500;
    std::size_t batch = 50;  // windows per gradient step
    std::size_t n_g = 24;    // lifted dimension, physical states included when include_state
    std::size_t n_p = 10;
    std::array<double, 3> alpha{0.45, 0.45, 0.1};  // recon, pred, lin
    std::uint64_t seed = 1;
    Optimizer optimizer = Optimizer::Adam;
    std::size_t encoder_width = 496;
    std::size_t encoder_layers = 3;  // hidden layers
    Activation activation = Activation::Sigmoid;
    std::size_t decoder_width = 992;  // hidden width of the linear decoder
    std::size_t decoder_layers = 3;   // weight matrices in the linear decoder
    bool include_state = true;
    double divergence_factor = 1e3;

    /// Wind-estimation model: sigmoid encoder, states prepended to the lift.
    static TrainingConfig ae1(std::size_t n_g);
    /// Farm-power model: swish 3 x 20 encoder, single-layer decoder.
    static TrainingConfig ae2(std::size_t n_g = 2);

    std::size_t encoder_outputs(std::size_t n_x) const;
    void validate(std::size_t n_x) const;
};

struct LossBreakdown {
    double recon = 0.0;
    double pred = 0.0;
    double lin = 0.0;
    double total = 0.0;
};

/// Normalized training signals; column k is sample k.
struct TrainingData {
    Matrix x;  // encoder inputs
    Matrix u;
    Matrix y;  // decoder targets
};

struct LossGradients {
    Matrix a, b, c;
    std::vector<Matrix> encoder;
};

/// Loss over the windows starting at first..first+count-1, each needing n_p
/// future samples. `a`, `b`, `c` are the effective (collapsed) matrices.
LossBreakdown compute_loss(const Network& encoder, bool include_state, const Matrix& a, const Matrix& b,
                           const Matrix& c, const TrainingData& data, std::size_t first, std::size_t count,
                           std::size_t n_p, const std::array<double, 3>& alpha, LossGradients* grads = nullptr);

/// Adam or SGD state for a list of parameter matrices.
class ParameterOptimizer {
public:
    ParameterOptimizer(Optimizer kind, double eta);
    void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads);

private:
    Optimizer kind_;
    double eta_;
    long t_ = 0;
    std::vector<Matrix> m_, v_;
};

struct TrainingResult {
    KoopmanModel model;
    std::vector<LossBreakdown> curve;  // mean batch loss per epoch
};

struct BilevelDiagnostics {
    Network epoch1_encoder;   // encoder used for the decoder reinitialization
    Vector decoder_reinit;    // row sum of X_+ G_+^+ at that point
};

/// Joint gradient training of encoder, linear A/B networks and linear
/// decoder. `states` are both encoded and reconstructed.
TrainingResult train_single_level(const Dataset& d, const std::vector<std::string>& states, const TrainingConfig& cfg);

/// Per epoch: (A, B) by EDMD on the current encoder, then gradient steps on
/// encoder and decoder with (A, B) fixed. The decoder predicts the sum of the
/// `states` channels, named `output`.
TrainingResult train_bilevel(const Dataset& d, const std::vector<std::string>& states, const std::string& output,
                             const TrainingConfig& cfg, BilevelDiagnostics* diagnostics = nullptr);

void write_training_curve(std::ostream& out, const std::vector<LossBreakdown>& curve);
void write_training_curve(const std::string& path, const std::vector<LossBreakdown>& curve);

}  // namespace koopwind
