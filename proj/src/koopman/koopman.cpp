#include "koopwind/koopman.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "koopwind/linalg.hpp"

namespace koopwind {

Scaling Scaling::identity(std::size_t n) { return {Vector(n, 0.0), Vector(n, 1.0)}; }

Scaling Scaling::standardize(const Matrix& rows) {
    require(rows.cols() > 0, "standardize: no samples");
    Scaling s{Vector(rows.rows()), Vector(rows.rows())};
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        const auto r = rows.row_span(i);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= double(r.size());
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        const double sd = std::sqrt(var / double(r.size()));
        s.offset[i] = mean;
        s.scale[i] = sd > 1e-12 * (std::abs(mean) + 1.0) ? sd : 1.0;
    }
    return s;
}

Vector Scaling::normalize(std::span<const double> v) const {
    require(v.size() == size(), "scaling: wrong vector length");
    Vector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - offset[i]) / scale[i];
    return out;
}

Vector Scaling::denormalize(std::span<const double> v) const {
    require(v.size() == size(), "scaling: wrong vector length");
    Vector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * scale[i] + offset[i];
    return out;
}

Matrix Scaling::normalize_rows(const Matrix& m) const {
    require(m.rows() == size(), "scaling: wrong row count");
    Matrix out = m;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (double& v : out.row_span(i)) v = (v - offset[i]) / scale[i];
    return out;
}

Matrix Scaling::denormalize_rows(const Matrix& m) const {
    require(m.rows() == size(), "scaling: wrong row count");
    Matrix out = m;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (double& v : out.row_span(i)) v = v * scale[i] + offset[i];
    return out;
}

std::string to_string(LiftingKind k) {
    switch (k) {
        case LiftingKind::Identity: return "identity";
        case LiftingKind::Affine: return "affine";
        case LiftingKind::Encoder: return "encoder";
        case LiftingKind::Physical: return "physical";
    }
    return "?";
}

LiftingKind parse_lifting_kind(const std::string& name) {
    if (name == "identity") return LiftingKind::Identity;
    if (name == "affine") return LiftingKind::Affine;
    if (name == "encoder") return LiftingKind::Encoder;
    if (name == "physical") return LiftingKind::Physical;
    throw UsageError("unknown lifting kind '" + name + "'");
}

Lifting Lifting::identity(std::size_t n_x) { return {LiftingKind::Identity, n_x, false, {}, {}}; }

Lifting Lifting::affine(std::size_t n_x) { return {LiftingKind::Affine, n_x, false, {}, {}}; }

Lifting Lifting::encoder_lifting(Network net, bool include_state) {
    const std::size_t n_x = net.spec().input_width();
    return {LiftingKind::Encoder, n_x, include_state, std::move(net), {}};
}

Lifting Lifting::physical(std::size_t n_x, std::vector<std::size_t> windows) {
    for (std::size_t w : windows) require(w >= 1, "moving-average windows must be positive");
    return {LiftingKind::Physical, n_x, false, {}, std::move(windows)};
}

std::size_t Lifting::n_g() const {
    switch (kind) {
        case LiftingKind::Identity: return n_x;
        case LiftingKind::Affine: return n_x + 1;
        case LiftingKind::Encoder: return (include_state ? n_x : 0) + encoder.spec().output_width();
        case LiftingKind::Physical: return 3 * n_x + n_x * (n_x - 1) / 2 + 2 * n_x * windows.size() + 1;
    }
    return 0;
}

std::size_t Lifting::history() const {
    if (kind != LiftingKind::Physical || windows.empty()) return 1;
    return *std::max_element(windows.begin(), windows.end());
}

Vector Lifting::operator()(std::span<const double> x) const {
    require(x.size() == n_x, "lifting: state has wrong length");
    const Matrix m = lift_sequence(Matrix::column(x));
    return m.column_vector(0);
}

Matrix Lifting::lift_sequence(const Matrix& x) const {
    require(x.rows() == n_x, "lifting: state has wrong length");
    const std::size_t n = x.cols();
    Matrix g(n_g(), n);
    switch (kind) {
        case LiftingKind::Identity: return x;
        case LiftingKind::Affine:
            g.set_block(0, 0, x);
            for (double& v : g.row_span(n_x)) v = 1.0;
            return g;
        case LiftingKind::Encoder: {
            const Matrix e = encoder.forward_batch(x.transposed()).transposed();
            if (!include_state) return e;
            return vstack(x, e);
        }
        case LiftingKind::Physical: break;
    }
    std::size_t r = 0;
    for (std::size_t i = 0; i < n_x; ++i, ++r)
        for (std::size_t k = 0; k < n; ++k) g(r, k) = x(i, k);
    for (std::size_t i = 0; i < n_x; ++i, ++r)
        for (std::size_t k = 0; k < n; ++k) g(r, k) = x(i, k) * x(i, k);
    for (std::size_t i = 0; i < n_x; ++i, ++r)
        for (std::size_t k = 0; k < n; ++k) g(r, k) = x(i, k) * x(i, k) * x(i, k);
    for (std::size_t i = 0; i < n_x; ++i)
        for (std::size_t j = i + 1; j < n_x; ++j, ++r)
            for (std::size_t k = 0; k < n; ++k) g(r, k) = x(i, k) * x(j, k);
    for (int power : {1, 3}) {
        for (std::size_t i = 0; i < n_x; ++i) {
            Vector prefix(n + 1, 0.0);
            for (std::size_t k = 0; k < n; ++k) prefix[k + 1] = prefix[k] + std::pow(x(i, k), power);
            for (std::size_t w : windows) {
                for (std::size_t k = 0; k < n; ++k) {
                    const std::size_t lo = k + 1 >= w ? k + 1 - w : 0;
                    g(r, k) = (prefix[k + 1] - prefix[lo]) / double(k + 1 - lo);
                }
                ++r;
            }
        }
    }
    for (double& v : g.row_span(r)) v = 1.0;
    return g;
}

void KoopmanModel::validate() const {
    require(a.rows() == a.cols(), "model: A must be square");
    require(b.rows() == a.rows(), "model: B row count must equal n_g");
    require(c.cols() == a.rows(), "model: C column count must equal n_g");
    require(lifting.n_g() == a.rows(), "model: lifting dimension does not match A");
    require(state_scaling.size() == lifting.n_x, "model: state scaling has wrong length");
    require(input_scaling.size() == n_u(), "model: input scaling has wrong length");
    require(output_scaling.size() == n_y(), "model: output scaling has wrong length");
    require(state_names.size() == lifting.n_x, "model: state names do not match n_x");
    require(input_names.size() == n_u(), "model: input names do not match n_u");
    require(output_names.size() == n_y(), "model: output names do not match n_y");
}

Vector KoopmanModel::encode(std::span<const double> x) const { return lifting(state_scaling.normalize(x)); }

Vector KoopmanModel::decode(std::span<const double> g) const { return output_scaling.denormalize(c * g); }

Vector KoopmanModel::advance(std::span<const double> g, std::span<const double> u) const {
    Vector next = a * g;
    const Vector un = input_scaling.normalize(u);
    const Vector bu = b * un;
    for (std::size_t i = 0; i < next.size(); ++i) next[i] += bu[i];
    return next;
}

SnapshotMatrices build_snapshot_matrices(const Matrix& lifted, const Matrix& inputs, const Matrix& outputs) {
    const std::size_t n_o = lifted.cols();
    require(inputs.cols() == n_o && outputs.cols() == n_o, "snapshot sources have different sample counts");
    const std::size_t n_g = lifted.rows(), n_u = inputs.rows();
    if (n_o < n_g + n_u + 1) throw UsageError("insufficient snapshots");
    SnapshotMatrices s;
    s.g_u = vstack(lifted.block(0, 0, n_g, n_o - 1), inputs.block(0, 0, n_u, n_o - 1));
    s.g_plus = lifted.block(0, 1, n_g, n_o - 1);
    s.x_plus = outputs.block(0, 1, outputs.rows(), n_o - 1);
    s.x_now = outputs.block(0, 0, outputs.rows(), n_o - 1);
    return s;
}

SnapshotMatrices build_snapshot_matrices(const Dataset& d, const Lifting& lift, const std::vector<std::string>& outputs) {
    return build_snapshot_matrices(lift.lift_sequence(d.x), d.u, output_matrix(d, outputs));
}

Matrix edmd_operator(const Matrix& g_u, const Matrix& g_plus, const EdmdOptions& options, double* condition,
                     bool* ridge) {
    require(g_u.cols() == g_plus.cols(), "edmd: G_u and G_+ column counts differ");
    if (!g_u.all_finite() || !g_plus.all_finite()) throw NumericalError("edmd: non-finite snapshot data");
    const double cond = condition_number(g_u);
    if (condition) *condition = cond;
    if (ridge) *ridge = cond > options.ridge_condition;
    if (!(cond > options.ridge_condition)) return g_plus * pinv(g_u, options.pinv_tol);

    Matrix gram;
    gemm(1.0, g_u, Trans::No, g_u, Trans::Yes, 0.0, gram);
    double trace = 0.0;
    for (std::size_t i = 0; i < gram.rows(); ++i) trace += gram(i, i);
    const double lambda = std::max(1e-8 * trace / double(gram.rows()), 1e-300);
    for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) += lambda;
    Matrix rhs;
    gemm(1.0, g_plus, Trans::No, g_u, Trans::Yes, 0.0, rhs);
    const auto l = cholesky(gram);
    if (!l) return g_plus * pinv(g_u, options.pinv_tol);
    Matrix k(rhs.rows(), rhs.cols());
    for (std::size_t r = 0; r < rhs.rows(); ++r) {
        const Vector row = cholesky_solve(*l, rhs.row_span(r));
        std::copy(row.begin(), row.end(), k.row_span(r).begin());
    }
    return k;
}

EdmdResult edmd_fit(const SnapshotMatrices& m, const EdmdOptions& options) {
    const std::size_t n_g = m.g_plus.rows();
    require(m.g_u.rows() > n_g, "edmd: G_u must stack lifted states and inputs");
    EdmdResult r;
    const Matrix k = edmd_operator(m.g_u, m.g_plus, options, &r.condition, &r.ridge);
    r.a = k.block(0, 0, n_g, n_g);
    r.b = k.block(0, n_g, n_g, k.cols() - n_g);
    r.residual_k = (m.g_plus - k * m.g_u).frobenius_norm();
    if (options.output_fit == OutputFit::NextState) {
        r.c = m.x_plus * pinv(m.g_plus, options.pinv_tol);
        r.residual_c = (m.x_plus - r.c * m.g_plus).frobenius_norm();
    } else {
        const Matrix g_now = m.g_u.block(0, 0, n_g, m.g_u.cols());
        r.c = m.x_now * pinv(g_now, options.pinv_tol);
        r.residual_c = (m.x_now - r.c * g_now).frobenius_norm();
    }
    return r;
}

double spectral_radius(const Matrix& a) {
    require(a.rows() == a.cols(), "spectral_radius: matrix must be square");
    double nrm = a.frobenius_norm();
    if (nrm == 0.0) return 0.0;
    Matrix p = a * (1.0 / nrm);
    double log_norm = std::log(nrm);  // log ||A^(2^j)||
    double power = 1.0;
    for (int j = 0; j < 24; ++j) {
        p = p * p;
        nrm = p.frobenius_norm();
        if (nrm == 0.0) return 0.0;
        p *= 1.0 / nrm;
        log_norm = 2.0 * log_norm + std::log(nrm);
        power *= 2.0;
    }
    return std::exp(log_norm / power);
}

Rollout rollout(const Matrix& a, const Matrix& b, const Matrix& c, std::span<const double> g0, const Matrix& inputs) {
    require(g0.size() == a.rows(), "rollout: g0 has wrong length");
    require(inputs.rows() == b.cols(), "rollout: inputs have wrong row count");
    const std::size_t np = inputs.cols();
    Rollout r{Matrix(a.rows(), np + 1), Matrix(c.rows(), np + 1)};
    Vector g(g0.begin(), g0.end());
    for (std::size_t i = 0;; ++i) {
        r.g.set_column(i, g);
        r.y.set_column(i, c * g);
        if (i == np) break;
        Vector next = a * g;
        const Vector bu = b * inputs.column_vector(i);
        for (std::size_t j = 0; j < next.size(); ++j) next[j] += bu[j];
        g = std::move(next);
    }
#ifndef NDEBUG
    const Rollout check = rollout_powered(a, b, c, g0, inputs);
    const double scale = 1.0 + r.g.max_abs();
    if ((check.g - r.g).max_abs() > 1e-8 * scale) throw NumericalError("rollout: powered and iterated forms disagree");
#endif
    return r;
}

Rollout rollout_powered(const Matrix& a, const Matrix& b, const Matrix& c, std::span<const double> g0,
                        const Matrix& inputs) {
    require(g0.size() == a.rows(), "rollout: g0 has wrong length");
    require(inputs.rows() == b.cols(), "rollout: inputs have wrong row count");
    const std::size_t np = inputs.cols(), n = a.rows();
    std::vector<Matrix> powers{Matrix::identity(n)};
    for (std::size_t i = 1; i <= np; ++i) powers.push_back(a * powers.back());
    std::vector<Vector> bu;
    for (std::size_t j = 0; j < np; ++j) bu.push_back(b * inputs.column_vector(j));
    Rollout r{Matrix(n, np + 1), Matrix(c.rows(), np + 1)};
    for (std::size_t i = 0; i <= np; ++i) {
        Vector g = powers[i] * g0;
        for (std::size_t j = 0; j < i; ++j) {
            const Vector t = powers[i - 1 - j] * bu[j];
            for (std::size_t q = 0; q < n; ++q) g[q] += t[q];
        }
        r.g.set_column(i, g);
        r.y.set_column(i, c * g);
    }
    return r;
}

double vaf(std::span<const double> y, std::span<const double> yhat) {
    require(y.size() == yhat.size(), "vaf: sequences differ in length");
    require(y.size() >= 2, "vaf: need at least two samples");
    const double n = double(y.size());
    double my = 0.0, me = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        my += y[k];
        me += y[k] - yhat[k];
    }
    my /= n;
    me /= n;
    double vy = 0.0, ve = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        vy += (y[k] - my) * (y[k] - my);
        const double e = y[k] - yhat[k] - me;
        ve += e * e;
    }
    if (vy <= 1e-300 * n || vy <= 1e-24 * n * (my * my)) throw NumericalError("constant reference signal");
    return std::max(0.0, 1.0 - ve / vy) * 100.0;
}

Vector output_series(const Dataset& d, const std::string& name) {
    const auto it = std::find(d.state_names.begin(), d.state_names.end(), name);
    if (it != d.state_names.end()) return d.state_row(name);
    if (name == "PWF") {
        Vector p = d.state_row("P1");
        const Vector p2 = d.state_row("P2");
        for (std::size_t k = 0; k < p.size(); ++k) p[k] += p2[k];
        return p;
    }
    throw UsageError("dataset has no output channel '" + name + "'");
}

Matrix output_matrix(const Dataset& d, const std::vector<std::string>& names) {
    Matrix m(names.size(), d.samples());
    for (std::size_t i = 0; i < names.size(); ++i) {
        const Vector s = output_series(d, names[i]);
        std::copy(s.begin(), s.end(), m.row_span(i).begin());
    }
    return m;
}

Matrix simulate_model(const KoopmanModel& m, const Dataset& d, std::size_t begin, std::size_t end) {
    m.validate();
    require(begin < end && end <= d.samples(), "simulate_model: range out of bounds");
    require(d.n_x() >= m.n_x(), "simulate_model: dataset has too few states");
    Matrix states(m.n_x(), d.samples());
    for (std::size_t i = 0; i < m.n_x(); ++i) {
        const Vector r = d.state_row(m.state_names[i]);
        std::copy(r.begin(), r.end(), states.row_span(i).begin());
    }
    const std::size_t h = std::min(m.lifting.history(), begin + 1);
    const Matrix hist = m.state_scaling.normalize_rows(states.block(0, begin + 1 - h, m.n_x(), h));
    Vector g = m.lifting.lift_sequence(hist).column_vector(h - 1);
    Matrix y(m.n_y(), end - begin);
    for (std::size_t k = begin; k < end; ++k) {
        y.set_column(k - begin, m.decode(g));
        g = m.advance(g, d.u.column_vector(k));
    }
    if (!y.all_finite()) throw NumericalError("simulate_model: prediction diverged");
    return y;
}

std::vector<double> evaluate_vaf(const KoopmanModel& m, const Dataset& d, std::size_t begin, std::size_t end) {
    const Matrix y = simulate_model(m, d, begin, end);
    std::vector<double> out;
    for (std::size_t i = 0; i < m.n_y(); ++i) {
        const Vector ref = output_series(d, m.output_names[i]);
        out.push_back(vaf(std::span(ref).subspan(begin, end - begin), y.row_span(i)));
    }
    return out;
}

EdmdIdentification identify_edmd(const Dataset& d, const Lifting& lift, const std::vector<std::string>& outputs,
                                 bool normalize, const EdmdOptions& options) {
    d.validate();
    require(lift.n_x == d.n_x(), "identify_edmd: lifting n_x does not match the dataset");
    const Matrix y = output_matrix(d, outputs);
    KoopmanModel m;
    m.lifting = lift;
    m.state_scaling = normalize ? Scaling::standardize(d.x) : Scaling::identity(d.n_x());
    m.input_scaling = normalize ? Scaling::standardize(d.u) : Scaling::identity(d.n_u());
    m.output_scaling = normalize ? Scaling::standardize(y) : Scaling::identity(outputs.size());
    m.state_names = d.state_names;
    m.input_names = d.input_names;
    m.output_names = outputs;
    const SnapshotMatrices s = build_snapshot_matrices(lift.lift_sequence(m.state_scaling.normalize_rows(d.x)),
                                                       m.input_scaling.normalize_rows(d.u),
                                                       m.output_scaling.normalize_rows(y));
    EdmdResult fit = edmd_fit(s, options);
    m.a = fit.a;
    m.b = fit.b;
    m.c = fit.c;
    m.spectral_radius = spectral_radius(m.a);
    return {std::move(m), std::move(fit)};
}

namespace {

void write_matrix(std::ostream& out, const char* tag, const Matrix& m) {
    out << '[' << tag << "] " << m.rows() << ' ' << m.cols() << '\n';
    char buf[32];
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
            out << (c ? " " : "") << buf;
        }
        out << '\n';
    }
}

void write_vector(std::ostream& out, const char* tag, const Vector& v) {
    out << tag;
    char buf[32];
    for (double x : v) {
        std::snprintf(buf, sizeof buf, " %.17g", x);
        out << buf;
    }
    out << '\n';
}

void write_names(std::ostream& out, const char* tag, const std::vector<std::string>& names) {
    out << tag << ' ' << names.size();
    for (const auto& n : names) out << ' ' << n;
    out << '\n';
}

void expect(std::istream& in, const std::string& tag) {
    std::string t;
    in >> t;
    if (!in || t != tag) throw UsageError("model file: expected '" + tag + "', found '" + t + "'");
}

Matrix read_matrix(std::istream& in, const std::string& tag) {
    expect(in, "[" + tag + "]");
    std::size_t r = 0, c = 0;
    in >> r >> c;
    Matrix m(r, c);
    for (double& v : m.values()) in >> v;
    if (!in) throw UsageError("model file: truncated matrix " + tag);
    return m;
}

Vector read_vector(std::istream& in, const std::string& tag, std::size_t n) {
    expect(in, tag);
    Vector v(n);
    for (double& x : v) in >> x;
    if (!in) throw UsageError("model file: truncated " + tag);
    return v;
}

std::vector<std::string> read_names(std::istream& in, const std::string& tag) {
    expect(in, tag);
    std::size_t n = 0;
    in >> n;
    std::vector<std::string> names(n);
    for (auto& s : names) in >> s;
    if (!in) throw UsageError("model file: truncated " + tag);
    return names;
}

void write_scaling(std::ostream& out, const char* tag, const Scaling& s) {
    out << '[' << tag << "]\n";
    write_vector(out, "offset", s.offset);
    write_vector(out, "scale", s.scale);
}

Scaling read_scaling(std::istream& in, const std::string& tag, std::size_t n) {
    expect(in, "[" + tag + "]");
    Scaling s;
    s.offset = read_vector(in, "offset", n);
    s.scale = read_vector(in, "scale", n);
    return s;
}

}  // namespace

void write_model(std::ostream& out, const KoopmanModel& m) {
    m.validate();
    out << "koopwind-model 1\n";
    out << "n_g " << m.n_g() << "\nn_u " << m.n_u() << "\nn_y " << m.n_y() << "\nn_x " << m.n_x() << '\n';
    out << "lifting " << to_string(m.lifting.kind) << "\ninclude_state " << (m.lifting.include_state ? 1 : 0) << '\n';
    out << "windows " << m.lifting.windows.size();
    for (std::size_t w : m.lifting.windows) out << ' ' << w;
    out << '\n';
    write_names(out, "states", m.state_names);
    write_names(out, "inputs", m.input_names);
    write_names(out, "outputs", m.output_names);
    char buf[48];
    std::snprintf(buf, sizeof buf, "spectral_radius %.17g\n", m.spectral_radius);
    out << buf;
    write_scaling(out, "state_scaling", m.state_scaling);
    write_scaling(out, "input_scaling", m.input_scaling);
    write_scaling(out, "output_scaling", m.output_scaling);
    write_matrix(out, "A", m.a);
    write_matrix(out, "B", m.b);
    write_matrix(out, "C", m.c);
    if (m.lifting.kind == LiftingKind::Encoder) {
        out << "[encoder]\n";
        write_network(out, m.lifting.encoder);
    }
}

void write_model(const std::string& path, const KoopmanModel& m) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw UsageError("cannot open '" + path + "' for writing");
    write_model(f, m);
}

KoopmanModel read_model(std::istream& in) {
    expect(in, "koopwind-model");
    int version = 0;
    in >> version;
    require(version == 1, "model file: unsupported version");
    std::size_t n_g = 0, n_u = 0, n_y = 0, n_x = 0;
    expect(in, "n_g");
    in >> n_g;
    expect(in, "n_u");
    in >> n_u;
    expect(in, "n_y");
    in >> n_y;
    expect(in, "n_x");
    in >> n_x;
    KoopmanModel m;
    std::string kind;
    expect(in, "lifting");
    in >> kind;
    m.lifting.kind = parse_lifting_kind(kind);
    m.lifting.n_x = n_x;
    int include = 0;
    expect(in, "include_state");
    in >> include;
    m.lifting.include_state = include != 0;
    std::size_t nw = 0;
    expect(in, "windows");
    in >> nw;
    m.lifting.windows.resize(nw);
    for (auto& w : m.lifting.windows) in >> w;
    m.state_names = read_names(in, "states");
    m.input_names = read_names(in, "inputs");
    m.output_names = read_names(in, "outputs");
    expect(in, "spectral_radius");
    in >> m.spectral_radius;
    m.state_scaling = read_scaling(in, "state_scaling", n_x);
    m.input_scaling = read_scaling(in, "input_scaling", n_u);
    m.output_scaling = read_scaling(in, "output_scaling", n_y);
    m.a = read_matrix(in, "A");
    m.b = read_matrix(in, "B");
    m.c = read_matrix(in, "C");
    if (m.lifting.kind == LiftingKind::Encoder) {
        expect(in, "[encoder]");
        m.lifting.encoder = read_network(in);
    }
    require(m.n_g() == n_g && m.n_u() == n_u && m.n_y() == n_y, "model file: header dimensions disagree with matrices");
    m.validate();
    return m;
}

KoopmanModel read_model(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open model '" + path + "'");
    return read_model(f);
}

}  // namespace koopwind
