#include "koopwind/network.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "koopwind/kernels.hpp"
#include "koopwind/random.hpp"

namespace koopwind {

std::string to_string(Activation a) {
    switch (a) {
        case Activation::Linear: return "linear";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Swish: return "swish";
    }
    return "?";
}

Activation parse_activation(const std::string& name) {
    if (name == "linear") return Activation::Linear;
    if (name == "sigmoid") return Activation::Sigmoid;
    if (name == "swish") return Activation::Swish;
    throw UsageError("unknown activation '" + name + "'");
}

void NetworkSpec::validate() const {
    require(!activations.empty(), "network needs at least one layer");
    require(widths.size() == activations.size() + 1, "network widths must have one entry more than layers");
    for (std::size_t w : widths) require(w > 0, "network widths must be positive");
}

NetworkSpec NetworkSpec::mlp(std::size_t in, std::size_t width, std::size_t hidden, std::size_t out, Activation act) {
    NetworkSpec s;
    s.widths.push_back(in);
    for (std::size_t h = 0; h < hidden; ++h) {
        s.widths.push_back(width);
        s.activations.push_back(act);
    }
    s.widths.push_back(out);
    s.activations.push_back(Activation::Linear);
    return s;
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    for (std::size_t l = 0; l < spec_.layers(); ++l) {
        weights_.emplace_back(spec_.widths[l + 1], spec_.widths[l]);
        biases_.emplace_back(spec_.widths[l + 1], 0.0);
    }
}

Network Network::glorot(NetworkSpec spec, std::mt19937_64& rng) {
    Network n(std::move(spec));
    for (Matrix& w : n.weights_) {
        const double lim = std::sqrt(6.0 / double(w.rows() + w.cols()));
        for (double& v : w.values()) v = uniform(rng, -lim, lim);
    }
    return n;
}

std::size_t Network::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const Matrix& w : weights_) n += w.size();
    return n;
}

namespace {

void activate(Activation a, const Matrix& z, Matrix& out) {
    out = Matrix(z.rows(), z.cols());
    switch (a) {
        case Activation::Linear: out = z; break;
        case Activation::Sigmoid: kernels::active().sigmoid(z.data(), out.data(), z.size()); break;
        case Activation::Swish: kernels::active().swish(z.data(), out.data(), z.size()); break;
    }
}

// dz = da * act'(z), in place on da.
void activation_backward(Activation a, const Matrix& z, Matrix& da) {
    if (a == Activation::Linear) return;
    Matrix s(z.rows(), z.cols());
    kernels::active().sigmoid(z.data(), s.data(), z.size());
    double* d = da.data();
    const double* sp = s.data();
    const double* zp = z.data();
    if (a == Activation::Sigmoid) {
        for (std::size_t i = 0; i < z.size(); ++i) d[i] *= sp[i] * (1.0 - sp[i]);
    } else {
        for (std::size_t i = 0; i < z.size(); ++i) d[i] *= sp[i] + zp[i] * sp[i] * (1.0 - sp[i]);
    }
}

}  // namespace

Vector Network::forward(std::span<const double> x) const {
    require(x.size() == spec_.input_width(), "network input has wrong length");
    Matrix m(1, x.size(), Vector(x.begin(), x.end()));
    const Matrix y = forward_batch(m);
    return {y.values().begin(), y.values().end()};
}

Matrix Network::forward_batch(const Matrix& x) const {
    require(x.cols() == spec_.input_width(), "network input batch has wrong width");
    Matrix cur = x, z;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        gemm(1.0, cur, Trans::No, weights_[l], Trans::Yes, 0.0, z);
        activate(spec_.activations[l], z, cur);
    }
    return cur;
}

ForwardCache Network::forward_cached(const Matrix& x) const {
    require(x.cols() == spec_.input_width(), "network input batch has wrong width");
    ForwardCache c;
    c.inputs.reserve(weights_.size());
    c.pre.resize(weights_.size());
    Matrix cur = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        gemm(1.0, cur, Trans::No, weights_[l], Trans::Yes, 0.0, c.pre[l]);
        c.inputs.push_back(std::move(cur));
        activate(spec_.activations[l], c.pre[l], cur);
    }
    c.output = std::move(cur);
    return c;
}

void Network::backward(const ForwardCache& cache, const Matrix& upstream, std::vector<Matrix>& grads,
                       Matrix* input_grad) const {
    require(upstream.rows() == cache.output.rows() && upstream.cols() == cache.output.cols(),
            "upstream gradient shape does not match the network output");
    grads.resize(weights_.size());
    Matrix da = upstream, next;
    for (std::size_t l = weights_.size(); l-- > 0;) {
        activation_backward(spec_.activations[l], cache.pre[l], da);
        gemm(1.0, da, Trans::Yes, cache.inputs[l], Trans::No, 0.0, grads[l]);
        if (l > 0 || input_grad) {
            gemm(1.0, da, Trans::No, weights_[l], Trans::No, 0.0, next);
            std::swap(da, next);
        }
    }
    if (input_grad) *input_grad = std::move(da);
}

bool Network::all_linear() const noexcept {
    for (Activation a : spec_.activations)
        if (a != Activation::Linear) return false;
    return true;
}

Matrix collapse_linear(const Network& net) {
    require(net.layers() > 0, "collapse_linear: empty network");
    require(net.all_linear(), "collapse_linear: network has a nonlinear layer");
    const std::size_t n = net.layers();
    if (net.spec().output_width() <= net.spec().input_width()) {
        Matrix m = net.weight(n - 1);
        for (std::size_t l = n - 1; l-- > 0;) m = m * net.weight(l);
        return m;
    }
    Matrix m = net.weight(0);
    for (std::size_t l = 1; l < n; ++l) m = net.weight(l) * m;
    return m;
}

void write_network(std::ostream& out, const Network& net) {
    out << "layers " << net.layers() << '\n';
    char buf[32];
    for (std::size_t l = 0; l < net.layers(); ++l) {
        const Matrix& w = net.weight(l);
        out << "layer " << w.cols() << ' ' << w.rows() << ' ' << to_string(net.spec().activations[l]) << '\n';
        for (std::size_t r = 0; r < w.rows(); ++r) {
            for (std::size_t c = 0; c < w.cols(); ++c) {
                std::snprintf(buf, sizeof buf, "%.17g", w(r, c));
                out << (c ? " " : "") << buf;
            }
            out << '\n';
        }
    }
}

Network read_network(std::istream& in) {
    std::string tag;
    std::size_t n = 0;
    in >> tag >> n;
    require(in && tag == "layers" && n > 0, "network: expected 'layers <n>'");
    NetworkSpec spec;
    std::vector<Matrix> ws;
    for (std::size_t l = 0; l < n; ++l) {
        std::size_t fan_in = 0, fan_out = 0;
        std::string act;
        in >> tag >> fan_in >> fan_out >> act;
        require(in && tag == "layer", "network: expected 'layer <in> <out> <activation>'");
        if (l == 0) spec.widths.push_back(fan_in);
        require(spec.widths.back() == fan_in, "network: layer widths do not chain");
        spec.widths.push_back(fan_out);
        spec.activations.push_back(parse_activation(act));
        Matrix w(fan_out, fan_in);
        for (double& v : w.values()) in >> v;
        require(bool(in), "network: truncated weights");
        ws.push_back(std::move(w));
    }
    Network net(spec);
    for (std::size_t l = 0; l < n; ++l) net.weight(l) = std::move(ws[l]);
    return net;
}

}  // namespace koopwind
