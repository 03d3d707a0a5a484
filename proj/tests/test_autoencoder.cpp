#include <cmath>
#include <sstream>

#include "doctest.h"
#include "koopwind/autoencoder.hpp"
#include "koopwind/linalg.hpp"
#include "koopwind/plant.hpp"
#include "test_support.hpp"

using namespace koopwind;
using testing::Rng;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

// L = sum(weights .* net(x)), so dL/d(output) = weights.
double probe_loss(const Network& net, const Matrix& x, const Matrix& weights) {
    const Matrix y = net.forward_batch(x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * weights.data()[i];
    return s;
}

Network random_net(std::mt19937_64& rng, std::size_t depth, Activation act, Rng& r) {
    NetworkSpec s;
    s.widths.push_back(r.index(1, 4));
    for (std::size_t l = 0; l < depth; ++l) {
        s.widths.push_back(r.index(1, 6));
        s.activations.push_back(l + 1 == depth ? (r.index(0, 1) ? act : Activation::Linear) : act);
    }
    return Network::glorot(s, rng);
}

struct LinearData {
    Matrix a, b;
    TrainingData data;
    Dataset dataset;
};

LinearData linear_system(Rng& rng, std::size_t n, std::size_t n_o) {
    LinearData s;
    s.a = testing::random_matrix(rng, n, n);
    s.a *= 0.8 / s.a.frobenius_norm();
    s.b = testing::random_matrix(rng, n, 1);
    s.data.x = Matrix(n, n_o);
    s.data.u = Matrix(1, n_o);
    Vector x = testing::random_vector(rng, n);
    for (std::size_t k = 0; k < n_o; ++k) {
        const double u = rng.uniform(-1, 1);
        s.data.x.set_column(k, x);
        s.data.u(0, k) = u;
        Vector nx = s.a * x;
        for (std::size_t i = 0; i < n; ++i) nx[i] += s.b(i, 0) * u;
        x = nx;
    }
    s.data.y = s.data.x;
    s.dataset.x = s.data.x;
    s.dataset.u = s.data.u;
    for (std::size_t i = 0; i < n; ++i) s.dataset.state_names.push_back("x" + std::to_string(i + 1));
    s.dataset.input_names = {"u"};
    return s;
}

}  // namespace

TEST_SUITE("network") {
    TEST_CASE("forward examples") {
        Network lin(NetworkSpec{{1, 1}, {Activation::Linear}});
        lin.weight(0)(0, 0) = 2.0;
        CHECK(lin.forward(Vector{3.0})[0] == 6.0);

        Network sig(NetworkSpec{{1, 1}, {Activation::Sigmoid}});
        CHECK(sig.forward(Vector{0.0})[0] == 0.5);

        Network sw(NetworkSpec{{1, 1}, {Activation::Swish}});
        sw.weight(0)(0, 0) = 1.0;
        CHECK(sw.forward(Vector{0.0})[0] == 0.0);
        CHECK(sw.forward(Vector{1.0})[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-14));
        CHECK(sw.forward(Vector{1.0})[0] == doctest::Approx(0.7311).epsilon(1e-4));

        CHECK_THROWS_AS(lin.forward(Vector{1.0, 2.0}), UsageError);
    }

    TEST_CASE("single linear layer gradient in closed form") {
        Rng r(1);
        std::mt19937_64 rng(2);
        Network net = Network::glorot(NetworkSpec{{3, 2}, {Activation::Linear}}, rng);
        const Vector x = testing::random_vector(r, 3), y = testing::random_vector(r, 2);
        const ForwardCache c = net.forward_cached(Matrix(1, 3, x));
        Matrix up(1, 2);
        for (std::size_t i = 0; i < 2; ++i) up(0, i) = c.output(0, i) - y[i];
        std::vector<Matrix> g;
        net.backward(c, up, g);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 3; ++j) CHECK(g[0](i, j) == doctest::Approx(up(0, i) * x[j]).epsilon(1e-15));
    }

    TEST_CASE("analytic gradients match central differences") {
        Rng r(3);
        std::mt19937_64 rng(4);
        for (Activation act : {Activation::Linear, Activation::Sigmoid, Activation::Swish}) {
            for (std::size_t depth = 1; depth <= 4; ++depth) {
                for (int rep = 0; rep < 2; ++rep) {
                    Network net = random_net(rng, depth, act, r);
                    const std::size_t batch = r.index(1, 5);
                    const Matrix x = testing::random_matrix(r, batch, net.spec().input_width());
                    const Matrix w = testing::random_matrix(r, batch, net.spec().output_width());
                    std::vector<Matrix> g;
                    Matrix dx;
                    net.backward(net.forward_cached(x), w, g, &dx);
                    const double h = 1e-5;
                    for (std::size_t l = 0; l < net.layers(); ++l) {
                        for (std::size_t i = 0; i < net.weight(l).size(); ++i) {
                            double& p = net.weight(l).data()[i];
                            const double keep = p;
                            p = keep + h;
                            const double up = probe_loss(net, x, w);
                            p = keep - h;
                            const double dn = probe_loss(net, x, w);
                            p = keep;
                            CHECK(rel_err(g[l].data()[i], (up - dn) / (2 * h)) < 1e-5);
                        }
                    }
                    Matrix xp = x;
                    for (std::size_t i = 0; i < x.size(); ++i) {
                        const double keep = xp.data()[i];
                        xp.data()[i] = keep + h;
                        const double up = probe_loss(net, xp, w);
                        xp.data()[i] = keep - h;
                        const double dn = probe_loss(net, xp, w);
                        xp.data()[i] = keep;
                        CHECK(rel_err(dx.data()[i], (up - dn) / (2 * h)) < 1e-5);
                    }
                }
            }
        }
    }

    TEST_CASE("zero upstream gives zero gradients") {
        std::mt19937_64 rng(5);
        const Network net = Network::glorot(NetworkSpec::mlp(3, 7, 2, 2, Activation::Swish), rng);
        Rng r(6);
        const Matrix x = testing::random_matrix(r, 4, 3);
        std::vector<Matrix> g;
        net.backward(net.forward_cached(x), Matrix(4, 2), g);
        for (const Matrix& m : g) CHECK(m.max_abs() == 0.0);
    }

    TEST_CASE("collapse_linear") {
        Network n(NetworkSpec{{1, 1, 1}, {Activation::Linear, Activation::Linear}});
        n.weight(0)(0, 0) = 2.0;
        n.weight(1)(0, 0) = 3.0;
        CHECK(collapse_linear(n)(0, 0) == 6.0);

        std::mt19937_64 rng(7);
        for (const auto& widths : {std::vector<std::size_t>{4, 9, 9, 3}, std::vector<std::size_t>{2, 5, 11, 7}}) {
            const Network net = Network::glorot({widths, {Activation::Linear, Activation::Linear, Activation::Linear}}, rng);
            const Matrix m = collapse_linear(net);
            Rng r(8);
            for (int t = 0; t < 20; ++t) {
                const Vector x = testing::random_vector(r, widths.front());
                CHECK(testing::max_abs_diff(m * x, net.forward(x)) < 1e-12);
            }
        }

        Network id(NetworkSpec{{3, 3, 3}, {Activation::Linear, Activation::Linear}});
        id.weight(0) = Matrix::identity(3);
        id.weight(1) = Matrix::identity(3);
        CHECK(collapse_linear(id) == Matrix::identity(3));

        CHECK_THROWS_AS(collapse_linear(Network(NetworkSpec::mlp(2, 3, 1, 2, Activation::Sigmoid))), UsageError);
    }

    TEST_CASE("text round trip is exact") {
        std::mt19937_64 rng(9);
        const Network net = Network::glorot(NetworkSpec::mlp(2, 6, 3, 4, Activation::Swish), rng);
        std::stringstream s;
        write_network(s, net);
        CHECK(read_network(s) == net);
    }
}

TEST_SUITE("loss") {
    TEST_CASE("perfect model has zero loss") {
        Rng rng(10);
        const LinearData s = linear_system(rng, 3, 60);
        Network enc(NetworkSpec{{3, 3}, {Activation::Linear}});
        enc.weight(0) = Matrix::identity(3);
        const LossBreakdown l = compute_loss(enc, false, s.a, s.b, Matrix::identity(3), s.data, 0, 40, 10, {1, 1, 1});
        CHECK(l.recon < 1e-20);
        CHECK(l.pred < 1e-20);
        CHECK(l.lin < 1e-20);
    }

    TEST_CASE("weights select terms and the total decomposes") {
        Rng rng(11);
        const LinearData s = linear_system(rng, 2, 80);
        std::mt19937_64 wr(12);
        const Network enc = Network::glorot(NetworkSpec::mlp(2, 8, 2, 3, Activation::Sigmoid), wr);
        const Matrix a = testing::random_matrix(rng, 5, 5) * 0.3, b = testing::random_matrix(rng, 5, 1),
                     c = testing::random_matrix(rng, 2, 5);
        const LossBreakdown only = compute_loss(enc, true, a, b, c, s.data, 3, 30, 5, {1, 0, 0});
        CHECK(only.total == only.recon);
        const std::array<double, 3> alpha{0.45, 0.45, 0.1};
        const LossBreakdown l = compute_loss(enc, true, a, b, c, s.data, 3, 30, 5, alpha);
        CHECK(std::abs(l.total - (0.45 * l.recon + 0.45 * l.pred + 0.1 * l.lin)) < 1e-12);
        CHECK_THROWS_WITH_AS(compute_loss(enc, true, a, b, c, s.data, 60, 30, 5, alpha), "compute_loss: window shorter than N_p",
                             UsageError);
    }

    TEST_CASE("one-step prediction term") {
        Rng rng(13);
        const LinearData s = linear_system(rng, 2, 50);
        std::mt19937_64 wr(14);
        const Network enc = Network::glorot(NetworkSpec::mlp(2, 5, 1, 2, Activation::Swish), wr);
        const Matrix a = testing::random_matrix(rng, 2, 2), b = testing::random_matrix(rng, 2, 1),
                     c = testing::random_matrix(rng, 2, 2);
        const LossBreakdown l = compute_loss(enc, false, a, b, c, s.data, 0, 20, 1, {1, 1, 1});
        double oracle = 0.0;
        for (std::size_t k = 0; k < 20; ++k) {
            const Vector g = enc.forward(s.data.x.column_vector(k));
            Vector next = a * g;
            for (std::size_t i = 0; i < 2; ++i) next[i] += b(i, 0) * s.data.u(0, k);
            const Vector y = c * next;
            for (std::size_t i = 0; i < 2; ++i) oracle += std::pow(y[i] - s.data.y(i, k + 1), 2);
        }
        CHECK(l.pred == doctest::Approx(oracle / 40.0).epsilon(1e-12));
    }

    TEST_CASE("loss gradients match central differences") {
        Rng rng(15);
        const LinearData s = linear_system(rng, 2, 40);
        std::mt19937_64 wr(16);
        for (bool include : {true, false}) {
            Network enc = Network::glorot(NetworkSpec::mlp(2, 4, 2, 3, Activation::Sigmoid), wr);
            const std::size_t ng = include ? 5 : 3;
            Matrix a = testing::random_matrix(rng, ng, ng) * 0.4, b = testing::random_matrix(rng, ng, 1),
                   c = testing::random_matrix(rng, 2, ng);
            const std::array<double, 3> alpha{0.3, 0.5, 0.2};
            LossGradients g;
            compute_loss(enc, include, a, b, c, s.data, 2, 15, 4, alpha, &g);
            auto total = [&] { return compute_loss(enc, include, a, b, c, s.data, 2, 15, 4, alpha).total; };
            auto probe = [&](Matrix& p, const Matrix& grad) {
                for (std::size_t i = 0; i < p.size(); ++i) {
                    double& v = p.data()[i];
                    const double keep = v, h = 1e-5;
                    v = keep + h;
                    const double up = total();
                    v = keep - h;
                    const double dn = total();
                    v = keep;
                    CHECK(rel_err(grad.data()[i], (up - dn) / (2 * h)) < 1e-5);
                }
            };
            probe(a, g.a);
            probe(b, g.b);
            probe(c, g.c);
            for (std::size_t l = 0; l < enc.layers(); ++l) probe(enc.weight(l), g.encoder[l]);
        }
    }
}

TEST_SUITE("training") {
    TrainingConfig small_ae1() {
        TrainingConfig c = TrainingConfig::ae1(3);
        c.encoder_width = 16;
        c.encoder_layers = 2;
        c.decoder_width = 8;
        c.epochs = 150;
        c.batch = 20;
        c.n_p = 5;
        c.eta = 3e-3;
        return c;
    }

    TEST_CASE("linear system is learned to small loss") {
        Rng rng(17);
        const LinearData s = linear_system(rng, 2, 400);
        const TrainingResult r = train_single_level(s.dataset, {"x1", "x2"}, small_ae1());
        CHECK(r.curve.size() == 150);
        CHECK(r.curve.back().total < 1e-4);
        for (std::size_t l = 0; l < r.model.lifting.encoder.layers(); ++l)
            for (double v : r.model.lifting.encoder.bias(l)) CHECK(v == 0.0);
        for (const LossBreakdown& l : r.curve)
            CHECK(std::abs(l.total - (0.45 * l.recon + 0.45 * l.pred + 0.1 * l.lin)) < 1e-12);
    }

    TEST_CASE("surrogate plant data: loss falls tenfold") {
        PlantConfig pc;
        const Dataset d = simulate_openloop(pc, generate_excitation(800, 2, 0.0, 2.0, 0.05, 1.0, 2));
        TrainingConfig c = small_ae1();
        c.n_g = 6;
        c.epochs = 60;
        const TrainingResult r = train_single_level(d, {"Ur1", "Ur2"}, c);
        CHECK(r.curve.back().total < 0.1 * r.curve.front().total);
    }

    TEST_CASE("training is deterministic") {
        Rng rng(18);
        const LinearData s = linear_system(rng, 2, 200);
        TrainingConfig c = small_ae1();
        c.epochs = 5;
        const TrainingResult a = train_single_level(s.dataset, {"x1", "x2"}, c);
        const TrainingResult b = train_single_level(s.dataset, {"x1", "x2"}, c);
        CHECK(a.model.lifting.encoder == b.model.lifting.encoder);
        CHECK(a.model.a == b.model.a);
        CHECK(a.model.c == b.model.c);
        c.seed = 99;
        CHECK_FALSE(train_single_level(s.dataset, {"x1", "x2"}, c).model.a == a.model.a);
    }

    TEST_CASE("divergence aborts") {
        Rng rng(19);
        const LinearData s = linear_system(rng, 2, 200);
        TrainingConfig c = small_ae1();
        c.optimizer = Optimizer::Sgd;
        c.eta = 50.0;
        c.epochs = 20;
        CHECK_THROWS_WITH_AS(train_single_level(s.dataset, {"x1", "x2"}, c), "training diverged", NumericalError);
    }

    TEST_CASE("bi-level contract") {
        PlantConfig pc;
        const Dataset d = simulate_openloop(pc, generate_excitation(1200, 2, 0.0, 2.0, 0.05, 1.0, 3));
        TrainingConfig c = TrainingConfig::ae2(2);
        c.epochs = 8;
        BilevelDiagnostics diag;
        const TrainingResult r = train_bilevel(d, {"P1", "P2"}, "PWF", c, &diag);
        const KoopmanModel& m = r.model;
        CHECK(m.c.rows() == 1);
        CHECK(m.output_names == std::vector<std::string>{"PWF"});

        const Matrix x = m.state_scaling.normalize_rows(output_matrix(d, {"P1", "P2"}));
        const Matrix u = m.input_scaling.normalize_rows(d.u);

        // Exported (A, B) is the EDMD solution for the final encoder.
        const SnapshotMatrices s = build_snapshot_matrices(m.lifting.lift_sequence(x), u, x);
        const Matrix k = hstack(m.a, m.b);
        const Matrix gram = s.g_u * s.g_u.transposed();
        const Matrix rhs = s.g_u * s.g_plus.transposed();
        for (std::size_t row = 0; row < k.rows(); ++row) {
            const Vector oracle = testing::gauss_solve(gram, rhs.column_vector(row));
            for (std::size_t col = 0; col < k.cols(); ++col)
                CHECK(std::abs(k(row, col) - oracle[col]) < 1e-10 * (1.0 + std::abs(oracle[col])));
        }
        const double base = (s.g_plus - k * s.g_u).frobenius_norm();
        Rng rng(20);
        for (int t = 0; t < 20; ++t) {
            Matrix dk = testing::random_matrix(rng, k.rows(), k.cols());
            dk *= 1e-3 / dk.frobenius_norm();
            CHECK((s.g_plus - (k + dk) * s.g_u).frobenius_norm() >= base);
        }

        // Decoder reinitialization after epoch 1: row sum of X_+ G_+^+.
        const SnapshotMatrices s1 = build_snapshot_matrices(Lifting::encoder_lifting(diag.epoch1_encoder, false).lift_sequence(x), u, x);
        const Matrix gg = s1.g_plus * s1.g_plus.transposed();
        const Matrix xg = s1.g_plus * s1.x_plus.transposed();
        Vector row_sum(2, 0.0);
        for (std::size_t out = 0; out < 2; ++out) {
            const Vector cr = testing::gauss_solve(gg, xg.column_vector(out));
            for (std::size_t j = 0; j < 2; ++j) row_sum[j] += cr[j];
        }
        REQUIRE(diag.decoder_reinit.size() == 2);
        for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(diag.decoder_reinit[j] - row_sum[j]) < 1e-12 * (1.0 + std::abs(row_sum[j])));

        // Shared power scale makes the summed output exact.
        CHECK(m.output_scaling.scale[0] == m.state_scaling.scale[0]);
        CHECK(m.state_scaling.scale[0] == m.state_scaling.scale[1]);
        CHECK(m.output_scaling.offset[0] == doctest::Approx(m.state_scaling.offset[0] + m.state_scaling.offset[1]));
    }

    TEST_CASE("training curve CSV") {
        std::ostringstream out;
        write_training_curve(out, {{1, 2, 3, 4}, {0.5, 0.25, 0.125, 1}});
        CHECK(out.str() == "epoch,L_recon,L_pred,L_lin,L_total\n1,1,2,3,4\n2,0.5,0.25,0.125,1\n");
    }
}
