#include "koopwind/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

#include "koopwind/kernels.hpp"
#include "koopwind/linalg.hpp"
#include "koopwind/random.hpp"

namespace koopwind {

TrainingConfig TrainingConfig::ae1(std::size_t n_g) {
    TrainingConfig c;
    c.n_g = n_g;
    c.encoder_width = n_g <= 6 ? 124 : 496;
    c.decoder_width = 2 * c.encoder_width;
    return c;
}

TrainingConfig TrainingConfig::ae2(std::size_t n_g) {
    TrainingConfig c;
    c.n_g = n_g;
    c.alpha = {1.0, 1.0, 1.0};
    c.encoder_width = 20;
    c.encoder_layers = 3;
    c.activation = Activation::Swish;
    c.decoder_layers = 1;
    c.include_state = false;
    return c;
}

std::size_t TrainingConfig::encoder_outputs(std::size_t n_x) const { return include_state ? n_g - n_x : n_g; }

void TrainingConfig::validate(std::size_t n_x) const {
    require(eta > 0.0, "training: eta must be positive");
    require(epochs >= 1, "training: need at least one epoch");
    require(batch >= 1, "training: batch size must be positive");
    require(n_p >= 1, "training: n_p must be at least 1");
    require(alpha[0] >= 0 && alpha[1] >= 0 && alpha[2] >= 0 && alpha[0] + alpha[1] + alpha[2] > 0,
            "training: loss weights must be nonnegative and not all zero");
    require(encoder_layers >= 1 && encoder_width >= 1, "training: encoder needs a hidden layer");
    require(decoder_layers >= 1, "training: decoder needs a layer");
    if (include_state) require(n_g > n_x, "training: n_g must exceed the state dimension");
    require(n_g >= 1, "training: n_g must be positive");
}

namespace {

double sum_squares(const Matrix& m) {
    double s = 0.0;
    for (double v : m.values()) s += v * v;
    return s;
}

Matrix columns(const Matrix& m, std::size_t first, std::size_t count) { return m.block(0, first, m.rows(), count); }

}  // namespace

LossBreakdown compute_loss(const Network& encoder, bool include_state, const Matrix& a, const Matrix& b,
                           const Matrix& c, const TrainingData& data, std::size_t first, std::size_t count,
                           std::size_t n_p, const std::array<double, 3>& alpha, LossGradients* grads) {
    const std::size_t n_x = data.x.rows();
    const std::size_t n_g = a.rows();
    const std::size_t n_y = c.rows();
    require(count >= 1, "compute_loss: no windows");
    require(n_p >= 1, "compute_loss: n_p must be at least 1");
    if (first + count + n_p > data.x.cols()) throw UsageError("compute_loss: window shorter than N_p");
    require(data.u.cols() == data.x.cols() && data.y.cols() == data.x.cols(), "compute_loss: data lengths differ");
    require(b.rows() == n_g && b.cols() == data.u.rows() && c.cols() == n_g && data.y.rows() == n_y,
            "compute_loss: matrix dimensions do not match");
    const std::size_t enc_rows = n_g - (include_state ? n_x : 0);
    require(encoder.spec().input_width() == n_x && encoder.spec().output_width() == enc_rows,
            "compute_loss: encoder widths do not match");

    const std::size_t span = count + n_p;
    const Matrix xs = columns(data.x, first, span);
    const ForwardCache cache = encoder.forward_cached(xs.transposed());
    const Matrix enc = cache.output.transposed();
    const Matrix phi = include_state ? vstack(xs, enc) : enc;

    const double w = double(count);
    const double cr = 2.0 / (w * double(n_y));
    const double cp = 2.0 / (w * double(n_y) * double(n_p));
    const double cl = 2.0 / (w * double(n_g) * double(n_p));

    LossBreakdown out;
    std::vector<Matrix> ghat{columns(phi, 0, count)};
    const Matrix r0 = c * ghat[0] - columns(data.y, first, count);
    out.recon = sum_squares(r0) / (w * double(n_y));
    std::vector<Matrix> res(n_p + 1), dev(n_p + 1);
    for (std::size_t i = 1; i <= n_p; ++i) {
        Matrix g = a * ghat[i - 1];
        gemm(1.0, b, Trans::No, columns(data.u, first + i - 1, count), Trans::No, 1.0, g);
        ghat.push_back(std::move(g));
        res[i] = c * ghat[i] - columns(data.y, first + i, count);
        dev[i] = ghat[i] - columns(phi, i, count);
        out.pred += sum_squares(res[i]);
        out.lin += sum_squares(dev[i]);
    }
    out.pred /= w * double(n_y) * double(n_p);
    out.lin /= w * double(n_g) * double(n_p);
    out.total = alpha[0] * out.recon + alpha[1] * out.pred + alpha[2] * out.lin;
    if (!grads) return out;

    grads->a = Matrix(n_g, n_g);
    grads->b = Matrix(n_g, b.cols());
    grads->c = Matrix(n_y, n_g);
    Matrix dphi(n_g, span);

    gemm(alpha[0] * cr, r0, Trans::No, ghat[0], Trans::Yes, 1.0, grads->c);
    Matrix t;
    gemm(alpha[0] * cr, c, Trans::Yes, r0, Trans::No, 0.0, t);
    dphi.set_block(0, 0, t);

    Matrix lambda(n_g, count);
    for (std::size_t i = n_p; i >= 1; --i) {
        Matrix l;
        if (i < n_p) gemm(1.0, a, Trans::Yes, lambda, Trans::No, 0.0, l);
        else l = Matrix(n_g, count);
        gemm(alpha[1] * cp, c, Trans::Yes, res[i], Trans::No, 1.0, l);
        l += dev[i] * (alpha[2] * cl);
        gemm(alpha[1] * cp, res[i], Trans::No, ghat[i], Trans::Yes, 1.0, grads->c);
        Matrix d = dphi.block(0, i, n_g, count);
        d -= dev[i] * (alpha[2] * cl);
        dphi.set_block(0, i, d);
        gemm(1.0, l, Trans::No, ghat[i - 1], Trans::Yes, 1.0, grads->a);
        gemm(1.0, l, Trans::No, columns(data.u, first + i - 1, count), Trans::Yes, 1.0, grads->b);
        lambda = std::move(l);
    }
    Matrix d0 = dphi.block(0, 0, n_g, count);
    gemm(1.0, a, Trans::Yes, lambda, Trans::No, 1.0, d0);
    dphi.set_block(0, 0, d0);

    const Matrix upstream = dphi.block(n_g - enc_rows, 0, enc_rows, span).transposed();
    encoder.backward(cache, upstream, grads->encoder);
    return out;
}

ParameterOptimizer::ParameterOptimizer(Optimizer kind, double eta) : kind_(kind), eta_(eta) {}

void ParameterOptimizer::step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads) {
    require(params.size() == grads.size(), "optimizer: parameter and gradient counts differ");
    if (kind_ == Optimizer::Sgd) {
        for (std::size_t i = 0; i < params.size(); ++i)
            kernels::axpy(-eta_, grads[i]->data(), params[i]->data(), params[i]->size());
        return;
    }
    if (m_.empty()) {
        for (const Matrix* p : params) {
            m_.emplace_back(p->rows(), p->cols());
            v_.emplace_back(p->rows(), p->cols());
        }
    }
    require(m_.size() == params.size(), "optimizer: parameter list changed");
    ++t_;
    const double b1 = 0.9, b2 = 0.999;
    const kernels::AdamParams ap{eta_, b1, b2, 1e-8, 1.0 - std::pow(b1, double(t_)), 1.0 - std::pow(b2, double(t_))};
    for (std::size_t i = 0; i < params.size(); ++i) {
        require(grads[i]->size() == params[i]->size(), "optimizer: gradient shape mismatch");
        kernels::active().adam(params[i]->data(), grads[i]->data(), m_[i].data(), v_[i].data(), params[i]->size(), ap);
    }
}

namespace {

// Gradients of every factor of M = W_{L-1} ... W_0 given dL/dM:
// dW_l = S_l^T T_l with S_l = W_{L-1} ... W_{l+1} and T_l = dM (W_{l-1} ... W_0)^T.
// Both are built from the narrow output side, so the cost is O(n_out) per
// weight instead of a product of two wide factors.
void chain_gradients(const Network& net, const Matrix& dm, std::vector<Matrix>& grads) {
    const std::size_t n = net.layers();
    std::vector<Matrix> suffix(n);
    suffix[n - 1] = Matrix::identity(net.spec().output_width());
    for (std::size_t l = n - 1; l-- > 0;) suffix[l] = suffix[l + 1] * net.weight(l + 1);
    grads.resize(n);
    Matrix t = dm;
    for (std::size_t l = 0; l < n; ++l) {
        gemm(1.0, suffix[l], Trans::Yes, t, Trans::No, 0.0, grads[l]);
        if (l + 1 < n) {
            Matrix next;
            gemm(1.0, t, Trans::No, net.weight(l), Trans::Yes, 0.0, next);
            t = std::move(next);
        }
    }
}

Network linear_chain(std::vector<std::size_t> widths, std::mt19937_64& rng) {
    NetworkSpec s;
    s.widths = std::move(widths);
    s.activations.assign(s.widths.size() - 1, Activation::Linear);
    return Network::glorot(s, rng);
}

Matrix select_states(const Dataset& d, const std::vector<std::string>& states) {
    Matrix m(states.size(), d.samples());
    for (std::size_t i = 0; i < states.size(); ++i) {
        const Vector r = d.state_row(states[i]);
        std::copy(r.begin(), r.end(), m.row_span(i).begin());
    }
    return m;
}

std::vector<std::size_t> chunk_order(std::size_t chunks, std::mt19937_64& rng) {
    std::vector<std::size_t> order(chunks);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = chunks; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    return order;
}

void accumulate(LossBreakdown& acc, const LossBreakdown& l, double weight) {
    acc.recon += weight * l.recon;
    acc.pred += weight * l.pred;
    acc.lin += weight * l.lin;
    acc.total += weight * l.total;
}

void check_divergence(const LossBreakdown& l, double initial, const TrainingConfig& cfg) {
    if (!std::isfinite(l.total) || l.total > cfg.divergence_factor * initial) throw NumericalError("training diverged");
}

std::size_t window_count(const TrainingData& data, const TrainingConfig& cfg) {
    if (data.x.cols() <= cfg.n_p + cfg.batch) throw UsageError("training: dataset too short for the horizon and batch");
    return data.x.cols() - cfg.n_p;
}

}  // namespace

TrainingResult train_single_level(const Dataset& d, const std::vector<std::string>& states, const TrainingConfig& cfg) {
    d.validate();
    cfg.validate(states.size());
    const Matrix raw = select_states(d, states);
    KoopmanModel model;
    model.state_scaling = Scaling::standardize(raw);
    model.input_scaling = Scaling::standardize(d.u);
    model.output_scaling = model.state_scaling;
    model.state_names = states;
    model.input_names = d.input_names;
    model.output_names = states;

    TrainingData data;
    data.x = model.state_scaling.normalize_rows(raw);
    data.u = model.input_scaling.normalize_rows(d.u);
    data.y = data.x;

    const std::size_t n_x = states.size(), n_u = d.n_u(), n_g = cfg.n_g;
    std::mt19937_64 rng(cfg.seed);
    Network enc = Network::glorot(
        NetworkSpec::mlp(n_x, cfg.encoder_width, cfg.encoder_layers, cfg.encoder_outputs(n_x), cfg.activation), rng);
    Network anet = linear_chain({n_g, n_g, n_g}, rng);
    Network bnet = linear_chain({n_u, n_g, n_g}, rng);
    std::vector<std::size_t> dw{n_g};
    for (std::size_t l = 1; l < cfg.decoder_layers; ++l) dw.push_back(cfg.decoder_width);
    dw.push_back(n_x);
    Network dec = linear_chain(dw, rng);

    std::vector<Matrix*> params;
    for (Network* n : {&enc, &anet, &bnet, &dec})
        for (std::size_t l = 0; l < n->layers(); ++l) params.push_back(&n->weight(l));
    ParameterOptimizer opt(cfg.optimizer, cfg.eta);

    const std::size_t windows = window_count(data, cfg);
    const std::size_t chunks = (windows + cfg.batch - 1) / cfg.batch;
    std::mt19937_64 shuffle(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    TrainingResult result;
    double initial = -1.0;
    LossGradients g;
    std::vector<Matrix> ga, gb, gc;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        LossBreakdown acc;
        for (std::size_t chunk : chunk_order(chunks, shuffle)) {
            const std::size_t first = chunk * cfg.batch;
            const std::size_t count = std::min(cfg.batch, windows - first);
            const Matrix a = collapse_linear(anet), b = collapse_linear(bnet), c = collapse_linear(dec);
            const LossBreakdown l = compute_loss(enc, cfg.include_state, a, b, c, data, first, count, cfg.n_p, cfg.alpha, &g);
            if (initial < 0.0) initial = l.total;
            check_divergence(l, initial, cfg);
            accumulate(acc, l, double(count) / double(windows));

            chain_gradients(anet, g.a, ga);
            chain_gradients(bnet, g.b, gb);
            chain_gradients(dec, g.c, gc);
            std::vector<const Matrix*> grads;
            for (const auto* list : {&g.encoder, &ga, &gb, &gc})
                for (const Matrix& m : *list) grads.push_back(&m);
            opt.step(params, grads);
        }
        result.curve.push_back(acc);
    }

    model.a = collapse_linear(anet);
    model.b = collapse_linear(bnet);
    model.c = collapse_linear(dec);
    model.lifting = Lifting::encoder_lifting(std::move(enc), cfg.include_state);
    model.spectral_radius = spectral_radius(model.a);
    model.validate();
    result.model = std::move(model);
    return result;
}

TrainingResult train_bilevel(const Dataset& d, const std::vector<std::string>& states, const std::string& output,
                             const TrainingConfig& cfg, BilevelDiagnostics* diagnostics) {
    d.validate();
    cfg.validate(states.size());
    require(!cfg.include_state, "bilevel training lifts with the encoder only");
    const Matrix raw = select_states(d, states);
    KoopmanModel model;
    // One scale shared by all channels keeps the summed output exact:
    // (sum_i P_i - sum_i o_i) / s = sum_i (P_i - o_i) / s.
    model.state_scaling = Scaling::standardize(raw);
    double var = 0.0;
    for (double s : model.state_scaling.scale) var += s * s;
    const double shared = std::sqrt(var / double(states.size()));
    std::fill(model.state_scaling.scale.begin(), model.state_scaling.scale.end(), shared);
    model.input_scaling = Scaling::standardize(d.u);
    model.output_scaling = {{std::accumulate(model.state_scaling.offset.begin(), model.state_scaling.offset.end(), 0.0)},
                            {shared}};
    model.state_names = states;
    model.input_names = d.input_names;
    model.output_names = {output};

    TrainingData data;
    data.x = model.state_scaling.normalize_rows(raw);
    data.u = model.input_scaling.normalize_rows(d.u);
    data.y = Matrix(1, data.x.cols());
    for (std::size_t k = 0; k < data.x.cols(); ++k)
        for (std::size_t i = 0; i < data.x.rows(); ++i) data.y(0, k) += data.x(i, k);

    const std::size_t n_x = states.size(), n_g = cfg.n_g;
    std::mt19937_64 rng(cfg.seed);
    Network enc = Network::glorot(NetworkSpec::mlp(n_x, cfg.encoder_width, cfg.encoder_layers, n_g, cfg.activation), rng);
    Network dec = linear_chain({n_g, 1}, rng);
    std::vector<Matrix*> params;
    for (std::size_t l = 0; l < enc.layers(); ++l) params.push_back(&enc.weight(l));
    params.push_back(&dec.weight(0));
    ParameterOptimizer opt(cfg.optimizer, cfg.eta);

    const std::size_t windows = window_count(data, cfg);
    const std::size_t chunks = (windows + cfg.batch - 1) / cfg.batch;
    std::mt19937_64 shuffle(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    const EdmdOptions edmd;
    auto lift_all = [&]() { return enc.forward_batch(data.x.transposed()).transposed(); };

    TrainingResult result;
    double initial = -1.0;
    LossGradients g;
    Matrix a, b;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const SnapshotMatrices s = build_snapshot_matrices(lift_all(), data.u, data.x);
        const Matrix k = edmd_operator(s.g_u, s.g_plus, edmd);
        a = k.block(0, 0, n_g, n_g);
        b = k.block(0, n_g, n_g, k.cols() - n_g);

        LossBreakdown acc;
        for (std::size_t chunk : chunk_order(chunks, shuffle)) {
            const std::size_t first = chunk * cfg.batch;
            const std::size_t count = std::min(cfg.batch, windows - first);
            const LossBreakdown l =
                compute_loss(enc, false, a, b, dec.weight(0), data, first, count, cfg.n_p, cfg.alpha, &g);
            if (initial < 0.0) initial = l.total;
            check_divergence(l, initial, cfg);
            accumulate(acc, l, double(count) / double(windows));
            std::vector<const Matrix*> grads;
            for (const Matrix& m : g.encoder) grads.push_back(&m);
            grads.push_back(&g.c);
            opt.step(params, grads);
        }
        result.curve.push_back(acc);

        if (epoch == 0) {
            const SnapshotMatrices s1 = build_snapshot_matrices(lift_all(), data.u, data.x);
            const Matrix c = s1.x_plus * pinv(s1.g_plus, edmd.pinv_tol);
            Matrix row(1, n_g);
            for (std::size_t i = 0; i < c.rows(); ++i)
                for (std::size_t j = 0; j < n_g; ++j) row(0, j) += c(i, j);
            dec.weight(0) = row;
            if (diagnostics) {
                diagnostics->epoch1_encoder = enc;
                diagnostics->decoder_reinit.assign(row.values().begin(), row.values().end());
            }
        }
    }

    const SnapshotMatrices s = build_snapshot_matrices(lift_all(), data.u, data.x);
    const Matrix k = edmd_operator(s.g_u, s.g_plus, edmd);
    model.a = k.block(0, 0, n_g, n_g);
    model.b = k.block(0, n_g, n_g, k.cols() - n_g);
    model.c = dec.weight(0);
    model.lifting = Lifting::encoder_lifting(std::move(enc), false);
    model.spectral_radius = spectral_radius(model.a);
    model.validate();
    result.model = std::move(model);
    return result;
}

void write_training_curve(std::ostream& out, const std::vector<LossBreakdown>& curve) {
    out << "epoch,L_recon,L_pred,L_lin,L_total\n";
    char buf[128];
    for (std::size_t e = 0; e < curve.size(); ++e) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", e + 1, curve[e].recon, curve[e].pred,
                      curve[e].lin, curve[e].total);
        out << buf;
    }
}

void write_training_curve(const std::string& path, const std::vector<LossBreakdown>& curve) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw UsageError("cannot open '" + path + "' for writing");
    write_training_curve(f, curve);
}

}  // namespace koopwind
