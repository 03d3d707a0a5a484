#pragma once

#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "koopwind/matrix.hpp"

namespace koopwind {

enum class Activation { Linear, Sigmoid, Swish };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

/// Layer l maps widths[l] -> widths[l+1] with activations[l].
struct NetworkSpec {
    std::vector<std::size_t> widths;
    std::vector<Activation> activations;

    std::size_t layers() const noexcept { return activations.size(); }
    std::size_t input_width() const { return widths.front(); }
    std::size_t output_width() const { return widths.back(); }
    void validate() const;

    /// `hidden` layers of `width` with `act`, then a linear output layer.
    static NetworkSpec mlp(std::size_t in, std::size_t width, std::size_t hidden, std::size_t out, Activation act);

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

struct ForwardCache {
    std::vector<Matrix> inputs;  // per layer input, batch x widths[l]
    std::vector<Matrix> pre;     // per layer pre-activation, batch x widths[l+1]
    Matrix output;
};

/// Feedforward network with biases frozen at zero. Batches are row-major with
/// one sample per row.
class Network {
public:
    Network() = default;
    explicit Network(NetworkSpec spec);

    /// Glorot-uniform weights.
    static Network glorot(NetworkSpec spec, std::mt19937_64& rng);

    const NetworkSpec& spec() const noexcept { return spec_; }
    std::size_t layers() const noexcept { return weights_.size(); }
    Matrix& weight(std::size_t l) { return weights_[l]; }
    const Matrix& weight(std::size_t l) const { return weights_[l]; }
    const Vector& bias(std::size_t l) const { return biases_[l]; }
    std::size_t parameter_count() const noexcept;

    Vector forward(std::span<const double> x) const;
    Matrix forward_batch(const Matrix& x) const;
    ForwardCache forward_cached(const Matrix& x) const;

    /// Reverse pass for dL/d(output) = `upstream` (batch x out). Fills one
    /// gradient per weight matrix; returns dL/d(input) when requested.
    void backward(const ForwardCache& cache, const Matrix& upstream, std::vector<Matrix>& grads,
                  Matrix* input_grad = nullptr) const;

    bool all_linear() const noexcept;

    friend bool operator==(const Network&, const Network&) = default;

private:
    NetworkSpec spec_;
    std::vector<Matrix> weights_;  // widths[l+1] x widths[l]
    std::vector<Vector> biases_;   // zero, never updated
};

/// Product W_L ... W_1 of an all-linear network.
Matrix collapse_linear(const Network& net);

void write_network(std::ostream& out, const Network& net);
Network read_network(std::istream& in);

}  // namespace koopwind
