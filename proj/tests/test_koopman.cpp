#include <cmath>
#include <sstream>

#include "doctest.h"
#include "koopwind/koopman.hpp"
#include "test_support.hpp"

using namespace koopwind;
using testing::Rng;

namespace {

struct Lti {
    Matrix a, b;
};

Lti random_stable(Rng& rng, std::size_t n, std::size_t m, double radius = 0.9) {
    Matrix a = testing::random_matrix(rng, n, n);
    a *= radius / a.frobenius_norm();
    return {a, testing::random_matrix(rng, n, m)};
}

Dataset simulate_lti(const Lti& s, Rng& rng, std::size_t n_o, bool with_inputs = true) {
    const std::size_t n = s.a.rows(), m = s.b.cols();
    Dataset d;
    d.x = Matrix(n, n_o);
    d.u = Matrix(m, n_o);
    for (std::size_t i = 0; i < n; ++i) d.state_names.push_back("x" + std::to_string(i + 1));
    for (std::size_t i = 0; i < m; ++i) d.input_names.push_back("u" + std::to_string(i + 1));
    Vector x = testing::random_vector(rng, n);
    for (std::size_t k = 0; k < n_o; ++k) {
        Vector u = with_inputs ? testing::random_vector(rng, m) : Vector(m, 0.0);
        d.x.set_column(k, x);
        d.u.set_column(k, u);
        Vector next = s.a * x;
        const Vector bu = s.b * u;
        for (std::size_t i = 0; i < n; ++i) next[i] += bu[i];
        x = next;
    }
    return d;
}

}  // namespace

TEST_SUITE("snapshots") {
    TEST_CASE("shapes") {
        Rng rng(1);
        const Dataset d = simulate_lti(random_stable(rng, 2, 1), rng, 11);
        const auto s = build_snapshot_matrices(d, Lifting::identity(2), {"x1", "x2"});
        CHECK(s.g_u.rows() == 3);
        CHECK(s.g_u.cols() == 10);
        CHECK(s.g_plus.rows() == 2);
        CHECK(s.x_plus.cols() == 10);

        std::mt19937_64 wrng(3);
        const Network enc = Network::glorot(NetworkSpec::mlp(2, 8, 2, 6, Activation::Sigmoid), wrng);
        const auto e = build_snapshot_matrices(d, Lifting::encoder_lifting(enc, false), {"x1"});
        CHECK(e.g_plus.rows() == 6);
        CHECK(e.g_plus.cols() == 10);
    }

    TEST_CASE("G_plus is shifted one step ahead of the lifted block of G_u") {
        Dataset d;
        d.x = Matrix(1, 20);
        d.u = Matrix(1, 20);
        for (std::size_t k = 0; k < 20; ++k) d.x(0, k) = double(k);
        d.state_names = {"x"};
        d.input_names = {"u"};
        const auto s = build_snapshot_matrices(d, Lifting::affine(1), {"x"});
        for (std::size_t k = 0; k < 19; ++k) {
            CHECK(s.g_u(0, k) == double(k));
            CHECK(s.g_u(1, k) == 1.0);
            CHECK(s.g_plus(0, k) == double(k + 1));
            CHECK(s.x_plus(0, k) == double(k + 1));
        }
    }

    TEST_CASE("insufficient snapshots") {
        Rng rng(1);
        const Dataset d = simulate_lti(random_stable(rng, 3, 2), rng, 5);
        CHECK_THROWS_WITH_AS(build_snapshot_matrices(d, Lifting::identity(3), {"x1"}), "insufficient snapshots",
                             UsageError);
    }
}

TEST_SUITE("edmd") {
    TEST_CASE("scalar system") {
        Dataset d;
        d.x = Matrix(1, 40);
        d.u = Matrix(1, 40);
        d.state_names = {"x"};
        d.input_names = {"u"};
        Rng rng(2);
        double x = 0.3;
        for (std::size_t k = 0; k < 40; ++k) {
            d.x(0, k) = x;
            d.u(0, k) = rng.uniform(-1, 1);
            x = 0.5 * x + d.u(0, k);
        }
        const auto fit = edmd_fit(build_snapshot_matrices(d, Lifting::identity(1), {"x"}));
        CHECK(std::abs(fit.a(0, 0) - 0.5) < 1e-10);
        CHECK(std::abs(fit.b(0, 0) - 1.0) < 1e-10);
        CHECK(std::abs(fit.c(0, 0) - 1.0) < 1e-10);
        CHECK_FALSE(fit.ridge);
    }

    TEST_CASE("random stable LTI systems are recovered") {
        Rng rng(77);
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t n = 1 + trial % 4, m = 1 + trial % 2;
            const Lti s = random_stable(rng, n, m);
            const Dataset d = simulate_lti(s, rng, 200);
            const auto id = identify_edmd(d, Lifting::identity(n), d.state_names, false);
            CHECK(testing::max_abs_diff(id.model.a, s.a) < 1e-8);
            CHECK(testing::max_abs_diff(id.model.b, s.b) < 1e-8);
            CHECK(testing::max_abs_diff(id.model.c, Matrix::identity(n)) < 1e-8);
        }
    }

    TEST_CASE("zero input gives a negligible B") {
        Rng rng(5);
        const Lti s = random_stable(rng, 3, 2, 0.99);
        const Dataset d = simulate_lti(s, rng, 60, false);
        const auto fit = edmd_fit(build_snapshot_matrices(d, Lifting::identity(3), d.state_names));
        CHECK(fit.ridge);
        for (std::size_t c = 0; c < 2; ++c) CHECK(norm2(fit.b.column_vector(c)) < 1e-8);
    }

    TEST_CASE("identity lifting equals classical DMDc from the normal equations") {
        Rng rng(9);
        const Lti s = random_stable(rng, 3, 2);
        Dataset d = simulate_lti(s, rng, 120);
        for (double& v : d.x.values()) v += 1e-3 * rng.normal();
        const auto snaps = build_snapshot_matrices(d, Lifting::identity(3), d.state_names);
        const auto fit = edmd_fit(snaps);
        const Matrix gram = snaps.g_u * snaps.g_u.transposed();
        const Matrix rhs = snaps.g_u * snaps.g_plus.transposed();
        for (std::size_t r = 0; r < 3; ++r) {
            const Vector k_row = testing::gauss_solve(gram, rhs.column_vector(r));
            for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(fit.a(r, c) - k_row[c]) < 1e-9);
            for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(fit.b(r, c) - k_row[3 + c]) < 1e-9);
        }
    }

    TEST_CASE("stationarity: random perturbations never lower the residual") {
        Rng rng(10);
        Dataset d = simulate_lti(random_stable(rng, 2, 2), rng, 300);
        for (double& v : d.x.values()) v = std::tanh(v) + 0.01 * rng.normal();
        const auto snaps = build_snapshot_matrices(d, Lifting::physical(2, {3, 7}), d.state_names);
        const auto fit = edmd_fit(snaps);
        const Matrix k = hstack(fit.a, fit.b);
        const double base = (snaps.g_plus - k * snaps.g_u).frobenius_norm();
        CHECK(base == doctest::Approx(fit.residual_k).epsilon(1e-12));
        for (int t = 0; t < 50; ++t) {
            Matrix dk = testing::random_matrix(rng, k.rows(), k.cols());
            dk *= 1e-3 / dk.frobenius_norm();
            CHECK((snaps.g_plus - (k + dk) * snaps.g_u).frobenius_norm() >= base);
        }
    }

    TEST_CASE("reconstruction-style output fit") {
        Rng rng(12);
        const Dataset d = simulate_lti(random_stable(rng, 2, 1), rng, 50);
        EdmdOptions o;
        o.output_fit = OutputFit::CurrentState;
        const auto fit = edmd_fit(build_snapshot_matrices(d, Lifting::affine(2), {"x2"}), o);
        CHECK(std::abs(fit.c(0, 1) - 1.0) < 1e-10);
        CHECK(std::abs(fit.c(0, 0)) < 1e-10);
        CHECK(fit.residual_c < 1e-9);
    }
}

TEST_SUITE("rollout") {
    TEST_CASE("scalar hand evaluation") {
        const Rollout r = rollout(Matrix{{0.5}}, Matrix{{1.0}}, Matrix{{1.0}}, Vector{1.0}, Matrix{{1.0, 1.0}});
        CHECK(r.g(0, 2) == doctest::Approx(1.75).epsilon(1e-15));
    }

    TEST_CASE("identity dynamics with zero input are constant") {
        const Rollout r = rollout(Matrix::identity(3), Matrix(3, 1), Matrix::identity(3), Vector{1, 2, 3}, Matrix(1, 5));
        for (std::size_t i = 0; i <= 5; ++i)
            for (std::size_t j = 0; j < 3; ++j) CHECK(r.g(j, i) == double(j + 1));
    }

    TEST_CASE("powered and iterated forms agree") {
        Rng rng(13);
        for (int t = 0; t < 20; ++t) {
            const Lti s = random_stable(rng, 6, 2, 1.2);
            const Matrix c = testing::random_matrix(rng, 2, 6);
            const Vector g0 = testing::random_vector(rng, 6);
            const Matrix u = testing::random_matrix(rng, 2, 10);
            const Rollout a = rollout(s.a, s.b, c, g0, u);
            const Rollout b = rollout_powered(s.a, s.b, c, g0, u);
            CHECK(testing::max_abs_diff(a.g, b.g) < 1e-10 * (1.0 + a.g.max_abs()));
            CHECK(testing::max_abs_diff(a.y, b.y) < 1e-10 * (1.0 + a.y.max_abs()));
        }
    }

    TEST_CASE("superposition") {
        Rng rng(14);
        const Lti s = random_stable(rng, 4, 2);
        const Matrix c = testing::random_matrix(rng, 1, 4);
        const Vector g1 = testing::random_vector(rng, 4), g2 = testing::random_vector(rng, 4);
        const Matrix u1 = testing::random_matrix(rng, 2, 10), u2 = testing::random_matrix(rng, 2, 10);
        Vector gs = g1;
        for (std::size_t i = 0; i < 4; ++i) gs[i] += g2[i];
        const Matrix sum = rollout(s.a, s.b, c, g1, u1).g + rollout(s.a, s.b, c, g2, u2).g;
        CHECK(testing::max_abs_diff(sum, rollout(s.a, s.b, c, gs, u1 + u2).g) < 1e-12);
    }
}

TEST_SUITE("vaf") {
    TEST_CASE("examples") {
        Vector y(200), half(200), mean(200);
        for (std::size_t k = 0; k < 200; ++k) y[k] = std::sin(double(k) / 10.0);
        double m = 0.0;
        for (double v : y) m += v;
        m /= 200.0;
        for (std::size_t k = 0; k < 200; ++k) {
            half[k] = 0.9 * (y[k] - m) + m;
            mean[k] = m;
        }
        CHECK(vaf(y, y) == doctest::Approx(100.0));
        CHECK(vaf(y, mean) == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(vaf(y, half) == doctest::Approx(99.0).epsilon(1e-12));

        Vector y2 = y, h2 = half;
        for (auto& v : y2) v += 123.0;
        for (auto& v : h2) v += 123.0;
        CHECK(vaf(y2, h2) == doctest::Approx(vaf(y, half)).epsilon(1e-10));

        Vector bad = y;
        for (auto& v : bad) v = -5.0 * v;
        CHECK(vaf(y, bad) == 0.0);
    }

    TEST_CASE("errors") {
        CHECK_THROWS_WITH_AS(vaf(Vector(10, 3.0), Vector(10, 2.0)), "constant reference signal", NumericalError);
        CHECK_THROWS_AS(vaf(Vector{1.0}, Vector{1.0}), UsageError);
        CHECK_THROWS_AS(vaf(Vector{1.0, 2.0}, Vector{1.0}), UsageError);
    }
}

TEST_SUITE("models") {
    TEST_CASE("liftings") {
        CHECK(Lifting::physical(2, {10, 20, 40, 80}).n_g() == 24);
        const Lifting p = Lifting::physical(2, {2});
        Matrix x{{1, 2, 3}, {0, 1, 0}};
        const Matrix g = p.lift_sequence(x);
        CHECK(g.rows() == 12);
        // Rows: x(2), x^2(2), x^3(2), x1x2, MA2(x1), MA2(x2), MA2(x1^3), MA2(x2^3), 1
        CHECK(g(6, 1) == 2.0);
        CHECK(g(7, 0) == 1.0);
        CHECK(g(7, 2) == 2.5);
        CHECK(g(9, 2) == (8.0 + 27.0) / 2.0);
        CHECK(g(11, 1) == 1.0);
        const Vector single = p(Vector{3.0, 0.0});
        CHECK(single[7] == 3.0);
    }

    TEST_CASE("spectral radius") {
        CHECK(spectral_radius(Matrix{{0.5, 0.0}, {0.0, -0.9}}) == doctest::Approx(0.9).epsilon(1e-6));
        const double c = 0.8 * std::cos(0.3), s = 0.8 * std::sin(0.3);
        CHECK(spectral_radius(Matrix{{c, -s}, {s, c}}) == doctest::Approx(0.8).epsilon(1e-6));
        CHECK(spectral_radius(Matrix(3, 3)) == 0.0);
    }

    TEST_CASE("exact model simulates its own data with full VAF") {
        Rng rng(15);
        const Dataset d = simulate_lti(random_stable(rng, 3, 2), rng, 400);
        // Standardizing offsets the dynamics, so the constant feature is needed.
        const auto id = identify_edmd(d, Lifting::affine(3), {"x1", "x3"}, true);
        for (double v : evaluate_vaf(id.model, d, 300, 400)) CHECK(100.0 - v < 1e-9);
        const auto raw = identify_edmd(d, Lifting::identity(3), {"x1", "x3"}, false);
        for (double v : evaluate_vaf(raw.model, d, 300, 400)) CHECK(100.0 - v < 1e-9);
    }

    TEST_CASE("file round trip is bit-faithful") {
        Rng rng(16);
        const Dataset d = simulate_lti(random_stable(rng, 2, 2), rng, 100);
        std::mt19937_64 wrng(1);
        KoopmanModel m = identify_edmd(d, Lifting::physical(2, {4, 9}), {"x1"}, true).model;
        for (const KoopmanModel& model :
             {m, identify_edmd(d, Lifting::encoder_lifting(
                                      Network::glorot(NetworkSpec::mlp(2, 5, 2, 4, Activation::Swish), wrng), true),
                               {"x1", "x2"}, true)
                     .model}) {
            std::stringstream a;
            write_model(a, model);
            const KoopmanModel r = read_model(a);
            CHECK(r.a == model.a);
            CHECK(r.b == model.b);
            CHECK(r.c == model.c);
            CHECK(r.state_scaling == model.state_scaling);
            CHECK(r.output_names == model.output_names);
            CHECK(r.lifting.windows == model.lifting.windows);
            CHECK(r.lifting.encoder == model.lifting.encoder);
            CHECK(r.spectral_radius == model.spectral_radius);
            std::stringstream b;
            write_model(b, r);
            CHECK(a.str() == b.str());
        }
        std::stringstream broken("koopwind-model 1\nn_g 2\n");
        CHECK_THROWS_AS(read_model(broken), UsageError);
    }
}
