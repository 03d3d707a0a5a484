#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "koopwind/plant.hpp"

using namespace koopwind;

namespace {

PlantConfig no_induction() {
    PlantConfig c;
    c.rotor_induction = 0.0;
    return c;
}

double steady_power(const PlantConfig& c, double u, double ct) {
    return 0.5 * c.rho_a * std::numbers::pi * 63.0 * 63.0 * u * u * u * ct * (1.0 + c.cp_offset);
}

}  // namespace

TEST_CASE("config derives rotor area and delay") {
    PlantConfig c;
    CHECK(c.rotor_area() == doctest::Approx(std::numbers::pi * 63.0 * 63.0).epsilon(1e-12));
    CHECK(c.delay_samples() == 79);
    c.tau = 0.0;
    CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("effective wind speed") {
    CHECK(effective_wind_speed({Vector(5, 8.0), Vector(5, 0.0)}, 0.0) == doctest::Approx(8.0).epsilon(1e-15));
    CHECK(effective_wind_speed({{3.0}, {4.0}}, 0.0) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(effective_wind_speed({Vector(5, 8.0), Vector(5, 0.0)}, std::numbers::pi / 3) ==
          doctest::Approx(4.0).epsilon(1e-14));
    CHECK_THROWS_AS(effective_wind_speed({{}, {}}, 0.0), UsageError);
}

TEST_CASE("turbine step") {
    PlantConfig c;
    c.tau = 1.0;
    const auto one = turbine_step(0.0, 0.0, 8.0, 1.0, c);
    CHECK(one.power == doctest::Approx(3.9103e6).epsilon(1e-4));
    CHECK(one.power == doctest::Approx(steady_power(c, 8.0, 1.0)).epsilon(1e-14));
    CHECK(one.chat == 1.0);

    c.tau = 0.3;
    const auto decay = turbine_step(1e6, 0.5, 8.0, 0.0, c);
    CHECK(decay.power == doctest::Approx(0.7e6).epsilon(1e-15));

    for (const double tau : {0.1, 0.5, 0.9}) {
        c.tau = tau;
        double p = 0.0, ch = 0.0;
        for (int k = 0; k < 2000; ++k) {
            const auto n = turbine_step(p, ch, 7.0, 1.3, c);
            p = n.power;
            ch = n.chat;
        }
        CHECK(p == doctest::Approx(steady_power(c, 7.0, 1.3)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(turbine_step(0.0, 0.0, -1.0, 1.0, c), UsageError);
}

TEST_CASE("wake step") {
    SUBCASE("no thrust, no deficit") {
        PlantConfig c;
        PlantState s = make_state(c);
        s.inflow[1] = 5.0;
        double u = 0.0;
        for (int k = 0; k < 2000; ++k) u = wake_step(s, 0.0, c);
        CHECK(u == doctest::Approx(c.v_inf).epsilon(1e-12));
    }
    SUBCASE("full thrust, no recovery") {
        PlantConfig c;
        c.k_w = 0.0;
        PlantState s = make_state(c);
        double u = 0.0;
        const int n = int(c.delay_samples()) + int(5 * c.t_mix);
        for (int k = 0; k < n; ++k) u = wake_step(s, 2.0, c);
        CHECK(std::abs(u - c.v_inf / 3.0) < 0.01 * c.v_inf);
    }
    SUBCASE("transport delay") {
        PlantConfig c;
        PlantState s = make_state(c);
        const std::size_t d = c.delay_samples();
        for (std::size_t k = 0; k < d; ++k) CHECK(wake_step(s, 2.0, c) == c.v_inf);
        CHECK(wake_step(s, 2.0, c) < c.v_inf);
    }
}

TEST_CASE("farm step") {
    SUBCASE("no thrust from rest") {
        PlantConfig c;
        PlantState s = make_state(c);
        for (int k = 0; k < 300; ++k) CHECK(farm_step(s, {0.0, 0.0}, c).farm_power == 0.0);
    }
    SUBCASE("full thrust settles to greedy power") {
        PlantConfig c;
        PlantState s = make_state(c);
        FarmOutputs o;
        for (int k = 0; k < 3000; ++k) o = farm_step(s, {2.0, 2.0}, c);
        CHECK(o.farm_power == doctest::Approx(greedy_power(c)).epsilon(1e-4));
        CHECK(o.farm_power == doctest::Approx(o.power[0] + o.power[1]).epsilon(1e-15));
    }
    SUBCASE("wake acts without downstream thrust") {
        PlantConfig c;
        PlantState s = make_state(c);
        const std::size_t d = c.delay_samples();
        FarmOutputs o;
        for (std::size_t k = 0; k < d + 40; ++k) {
            o = farm_step(s, {1.5, 0.0}, c);
            CHECK(o.power[1] == 0.0);
        }
        CHECK(o.u_r[1] < c.v_inf - 0.5);
    }
    SUBCASE("out-of-range inputs are clamped and flagged") {
        PlantConfig c;
        PlantState s = make_state(c);
        const FarmOutputs o = farm_step(s, {3.0, -1.0}, c);
        CHECK(o.clamped);
        CHECK(s.chat[0] == doctest::Approx(c.tau * 2.0));
        CHECK(s.chat[1] == 0.0);
        CHECK_FALSE(farm_step(s, {1.0, 1.0}, c).clamped);
    }
}

TEST_CASE("energy bound and causality over random inputs") {
    PlantConfig c;
    c.cp_offset = 0.05;
    const Matrix u = generate_excitation(3000, 2, 0.0, 2.0, 0.05, 1.0, 3);
    PlantState s = make_state(c);
    const double bound = 0.5 * c.rho_a * c.rotor_area() * std::pow(c.v_inf, 3) * c.ct_max * (1.0 + c.cp_offset);
    for (std::size_t k = 0; k < u.cols(); ++k) {
        const auto o = farm_step(s, {u(0, k), u(1, k)}, c);
        CHECK(o.power[0] <= bound);
        CHECK(o.power[1] <= bound);
        CHECK(o.power[0] >= 0.0);
        CHECK(o.u_r[1] > 0.0);
        CHECK(o.u_r[1] <= c.v_inf);
    }

    // Perturb CT1 at k0; turbine 2's wind must agree until k0 + d.
    const std::size_t k0 = 500, d = c.delay_samples();
    PlantState a = make_state(c), b = make_state(c);
    for (std::size_t k = 0; k < k0 + d + 5; ++k) {
        const double ct2 = u(1, k);
        farm_step(a, {u(0, k), ct2}, c);
        farm_step(b, {k == k0 ? 2.0 - u(0, k) : u(0, k), ct2}, c);
        if (k < k0 + d) CHECK(a.u_r[1] == b.u_r[1]);
    }
    CHECK(a.u_r[1] != b.u_r[1]);
}

TEST_CASE("without wake or induction the plant is the frozen-wind qLPV model") {
    PlantConfig c = no_induction();
    c.k_w = 1.0;
    const Matrix u = generate_excitation(500, 2, 0.0, 2.0, 0.1, 1.0, 11);
    PlantState s = settled_state(c, {1.0, 1.0});
    // x = [P1, Chat1, P2, Chat2], x+ = (1-tau) x + tau [g V^3 ct; ct]
    double x[4] = {s.power[0], s.chat[0], s.power[1], s.chat[1]};
    const double gv3 = c.power_gain() * std::pow(c.v_inf, 3);
    double worst = 0.0;
    for (std::size_t k = 0; k < u.cols(); ++k) {
        farm_step(s, {u(0, k), u(1, k)}, c);
        for (std::size_t i = 0; i < 2; ++i) {
            x[2 * i] = (1 - c.tau) * x[2 * i] + c.tau * gv3 * u(i, k);
            x[2 * i + 1] = (1 - c.tau) * x[2 * i + 1] + c.tau * u(i, k);
        }
        worst = std::max({worst, std::abs(s.power[0] - x[0]) / gv3, std::abs(s.chat[0] - x[1]),
                          std::abs(s.power[1] - x[2]) / gv3, std::abs(s.chat[1] - x[3])});
        CHECK(s.u_r[0] == c.v_inf);
        CHECK(s.u_r[1] == doctest::Approx(c.v_inf).epsilon(1e-12));
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("with rotor induction the plant is the qLPV model scheduled on its own winds") {
    PlantConfig c;
    c.k_w = 1.0;
    const Matrix u = generate_excitation(500, 2, 0.0, 2.0, 0.1, 1.0, 12);
    PlantState s = make_state(c);
    double p[2] = {0, 0};
    double worst = 0.0;
    for (std::size_t k = 0; k < u.cols(); ++k) {
        const TurbinePair ur = s.u_r;
        farm_step(s, {u(0, k), u(1, k)}, c);
        for (std::size_t i = 0; i < 2; ++i) {
            p[i] = (1 - c.tau) * p[i] + c.tau * c.power_gain() * std::pow(ur[i], 3) * u(i, k);
            worst = std::max(worst, std::abs(s.power[i] - p[i]) / 4e6);
        }
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("excitation") {
    const Matrix a = generate_excitation(1000, 2, 0.0, 2.0, 0.05, 1.0, 9);
    const Matrix b = generate_excitation(1000, 2, 0.0, 2.0, 0.05, 1.0, 9);
    CHECK(a == b);
    CHECK_FALSE(a == generate_excitation(1000, 2, 0.0, 2.0, 0.05, 1.0, 10));

    const Matrix w = generate_excitation(10000, 1, -1.0, 1.0, 0.499, 1.0, 1);
    double mean = 0.0;
    for (double v : w.values()) mean += v;
    mean /= double(w.cols());
    double c0 = 0.0, c1 = 0.0;
    for (std::size_t k = 0; k < w.cols(); ++k) {
        c0 += (w(0, k) - mean) * (w(0, k) - mean);
        if (k > 0) c1 += (w(0, k) - mean) * (w(0, k - 1) - mean);
    }
    CHECK(c1 / c0 < 0.3);

    const Matrix slow = generate_excitation(10000, 2, 0.0, 2.0, 0.05, 1.0, 4);
    for (std::size_t c = 0; c < 2; ++c) {
        const auto r = slow.row_span(c);
        const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
        CHECK(*hi - *lo >= 0.8 * 2.0);
        for (double v : r) CHECK((v >= 0.0 && v <= 2.0));
    }
    CHECK_THROWS_AS(generate_excitation(0, 1, 0.0, 1.0, 0.1, 1.0, 0), UsageError);
    CHECK_THROWS_AS(generate_excitation(10, 1, 1.0, 0.0, 0.1, 1.0, 0), UsageError);
}

TEST_CASE("open-loop simulation") {
    PlantConfig c;
    SUBCASE("constant midpoint input leaves signals constant") {
        const Dataset d = simulate_openloop(c, Matrix(2, 200, 1.0));
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t k = 1; k < d.samples(); ++k)
                CHECK(std::abs(d.x(i, k) - d.x(i, 0)) <= 1e-12 * std::abs(d.x(i, 0)));
    }
    SUBCASE("constant off-midpoint input settles") {
        const Dataset d = simulate_openloop(c, Matrix(2, 600, 1.7));
        for (std::size_t i = 0; i < 4; ++i) CHECK(d.x(i, 599) == doctest::Approx(d.x(i, 598)).epsilon(1e-9));
    }
    SUBCASE("bookkeeping and power columns") {
        const Matrix u = generate_excitation(1000, 2, 0.0, 2.0, 0.05, 1.0, 5);
        const Dataset d = simulate_openloop(c, u);
        CHECK(d.samples() == 1000);
        CHECK(d.n_x() == 4);
        CHECK(d.state_names == std::vector<std::string>{"Ur1", "Ur2", "P1", "P2"});
        // Each recorded power obeys the turbine recursion with the recorded wind.
        for (std::size_t k = 0; k + 1 < d.samples(); ++k)
            for (std::size_t i = 0; i < 2; ++i) {
                const double next = (1 - c.tau) * d.x(2 + i, k) +
                                    c.tau * c.power_gain() * std::pow(d.x(i, k), 3) * d.u(i, k);
                CHECK(d.x(2 + i, k + 1) == doctest::Approx(next).epsilon(1e-12));
            }
    }
    SUBCASE("determinism including turbulence") {
        c.turbulence = 0.05;
        c.noise_seed = 3;
        const Matrix u = generate_excitation(300, 2, 0.0, 2.0, 0.05, 1.0, 5);
        std::ostringstream a, b;
        write_dataset_csv(a, simulate_openloop(c, u));
        write_dataset_csv(b, simulate_openloop(c, u));
        CHECK(a.str() == b.str());
    }
}

TEST_CASE("dataset CSV round trip") {
    const Dataset d = simulate_openloop(PlantConfig{}, generate_excitation(50, 2, 0.0, 2.0, 0.05, 1.0, 1));
    std::ostringstream out;
    write_dataset_csv(out, d);
    CHECK(out.str().rfind("k,Ur1,Ur2,P1,P2,CT1,CT2\n", 0) == 0);
    std::istringstream in(out.str());
    const Dataset r = read_dataset_csv(in, 2);
    CHECK(r.state_names == d.state_names);
    CHECK(r.input_names == d.input_names);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t k = 0; k < 50; ++k) CHECK(r.x(i, k) == doctest::Approx(d.x(i, k)).epsilon(1e-11));
}

TEST_CASE("greedy power") {
    PlantConfig c;
    const double g = greedy_power(c);
    const double single = steady_power(c, c.v_inf * (1.0 - axial_induction(2.0)), 2.0);
    CHECK(g < 2.0 * single);
    CHECK(g > single);

    PlantConfig free = c;
    free.k_w = 1.0;
    CHECK(greedy_power(free) == doctest::Approx(2.0 * single).epsilon(1e-6));

    PlantConfig fast = c;
    fast.v_inf = 16.0;
    CHECK(greedy_power(fast) / g == doctest::Approx(8.0).epsilon(0.01));
}
