#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "qhedge/diffusion_pde.hpp"
#include "qhedge/errors.hpp"
#include "qhedge/fs_engine.hpp"

using namespace qhedge;

namespace {

double ncdf(double v) { return 0.5 * std::erfc(-v / std::sqrt(2.0)); }

double lognormal_call(double F, double K, double v) {
    const double sd = std::sqrt(v);
    const double d1 = (std::log(F / K) + 0.5 * v) / sd;
    return F * ncdf(d1) - K * ncdf(d1 - sd);
}

// The benchmark: (mu_U, mu_S, r, sigma_U, sigma_S, rho) = (0.10, 0.08, 0.02, 0.3, 0.25, 0.8).
DiffusionSpec hm() { return DiffusionSpec::hulley_mcwalter(0.10, 0.08, 0.02, 0.3, 0.25, 0.8, 1.0, 100.0, 100.0); }

double hm_B() { return (0.10 - 0.02) - 0.8 * (0.3 / 0.25) * (0.08 - 0.02); }

Payoff call_on_x(double K) {
    return [K](double x, double) { return std::max(x - K, 0.0); };
}

}  // namespace

TEST_CASE("adjusted drift") {
    BlackScholesParams p;
    p.b_x = 0.05;
    p.b_s = 0.07;
    p.sigma_x = {0.0, 0.3};
    p.sigma_s = {0.2, 0.0};
    const auto uncorrelated = DiffusionSpec::black_scholes(p, 1.0, 1.0, 1.0);
    CHECK(adjusted_drift(uncorrelated, 0.0, 2.0, 3.0) == doctest::Approx(2.0 * 0.05));

    const double c = 0.6;
    auto f = [c](double, double x, double s) {
        return Coefficients{0.1 * x, 0.04 * s, {c * 0.2 * s, 0.0}, {0.2 * s, 0.0}};
    };
    const auto parallel = DiffusionSpec::bounded(f, 1e-6, 1e6, 1.0, 1.0, 1.0);
    CHECK(adjusted_drift(parallel, 0.0, 1.5, 2.0) == doctest::Approx(0.1 * 1.5 - c * 0.04 * 2.0));

    for (double x : {50.0, 100.0, 180.0}) {
        CHECK(adjusted_drift(hm(), 0.3, x, 90.0) == doctest::Approx(x * hm_B()).epsilon(1e-14));
    }
    auto degenerate = [](double, double, double) { return Coefficients{0.1, 0.1, {0.1, 0.0}, {1e-7, 0.0}}; };
    CHECK_THROWS_AS((void)adjusted_drift(DiffusionSpec::bounded(degenerate, 1e-6, 1.0, 1.0, 1.0, 1.0), 0, 1, 1),
                    DomainError);
}

TEST_CASE("spec validation") {
    CHECK_THROWS_AS(DiffusionSpec::hulley_mcwalter(0.1, 0.08, 0.02, 0.3, 0.25, 1.0, 1.0, 100.0, 100.0), RegimeError);
    CHECK_THROWS_AS(DiffusionSpec::hulley_mcwalter(0.1, 0.08, 0.02, 0.3, 0.25, 0.5, -1.0, 100.0, 100.0), DomainError);
    LevyParams j;
    j.covariance = Sym2{0.04, 0.0, 0.04};
    j.jump_intensity = 0.3;
    CHECK_THROWS_AS(DiffusionSpec::from_model(AdditiveModel::merton(j, 1.0, 1.0, 1.0)), RegimeError);
}

TEST_CASE("trivial claims") {
    const auto spec = hm();
    const auto stock = solve(spec, [](double, double s) { return s; });
    const auto one = solve(spec, [](double, double) { return 3.5; });
    for (double x : {70.0, 100.0, 140.0}) {
        for (double s : {75.0, 100.0, 130.0}) {
            CHECK(stock.y_at(0, x, s) == doctest::Approx(s).epsilon(1e-10));
            CHECK(stock.z_at(0, x, s) == doctest::Approx(1.0).epsilon(1e-10));
            CHECK(one.y_at(0, x, s) == doctest::Approx(3.5).epsilon(1e-12));
            CHECK(std::abs(one.z_at(0, x, s)) < 1e-12);
        }
    }
    CHECK(stock.warnings.empty());
    const auto mc_s = monte_carlo_representation(spec, 0.0, 100.0, 100.0, [](double, double s) { return s; }, 20000, 7);
    CHECK(std::abs(mc_s.value - 100.0) < 3.0 * mc_s.std_error);
    const auto mc_1 = monte_carlo_representation(spec, 0.0, 100.0, 100.0, [](double, double) { return 2.0; }, 1000, 7);
    CHECK(mc_1.value == 2.0);
    CHECK(mc_1.std_error == 0.0);
}

TEST_CASE("basis-risk call against the lognormal oracle") {
    const auto spec = hm();
    const double K = 100.0;
    const auto sol = solve(spec, call_on_x(K));
    CHECK(sol.cfl <= 0.4 + 1e-12);
    CHECK(sol.times.front() == 0.0);
    CHECK(sol.times.back() == doctest::Approx(1.0));
    const double want = lognormal_call(100.0 * std::exp(hm_B()), K, 0.09);
    CHECK(std::abs(sol.h0() - want) <= 1e-2 * want);
    for (double x : {80.0, 95.0, 110.0, 130.0}) {
        const double w = lognormal_call(x * std::exp(hm_B()), K, 0.09);
        CHECK(std::abs(sol.y_at(0, x, 100.0) - w) <= 1e-2 * w);
    }
    // Middle snapshot.
    const double t = sol.times[5];
    const double wm = lognormal_call(100.0 * std::exp(hm_B() * (1 - t)), K, 0.09 * (1 - t));
    CHECK(std::abs(sol.y_at(5, 100.0, 100.0) - wm) <= 1e-2 * wm);

    const auto mc = monte_carlo_representation(spec, 0.0, 100.0, 100.0, call_on_x(K), 100000, 2024);
    CHECK(std::abs(mc.value - sol.h0()) <= 3.0 * mc.std_error + 1e-2 * want);
    CHECK(std::abs(mc.value - want) <= 3.0 * mc.std_error);
}

TEST_CASE("PDE against the Fourier engine") {
    const auto spec = hm();
    const double K = 100.0;
    const auto sol = solve(spec, call_on_x(K));
    const double bx = 0.08 - 0.5 * 0.09, bs = 0.06 - 0.5 * 0.0625;
    const auto model = AdditiveModel::black_scholes({bx, bs}, 0.3, 0.25, 0.8, 1.0, 100.0, 100.0);
    const FSDecomposition dec(model, call_measure(K, 0.5, Axis::x) + power_claim({1.0, 0.0}));
    double worst_y = 0.0, worst_z = 0.0;
    for (int i = 0; i < 20; ++i) {
        for (int j = 0; j < 20; ++j) {
            const double x = 70.0 + 3.0 * i;
            const double s = 70.0 + 3.0 * j;
            REQUIRE(sol.interior(x, s));
            const FSValue v = dec.value(0.0, x, s);
            worst_y = std::max(worst_y, std::abs(sol.y_at(0, x, s) - v.y.real()) / std::abs(v.y.real()));
            worst_z = std::max(worst_z, std::abs(sol.z_at(0, x, s) - v.z.real()) / std::abs(v.z.real()));
        }
    }
    CHECK(worst_y <= 1e-2);
    CHECK(worst_z <= 2e-2);
    // Model route gives the same spec.
    const auto from_model = DiffusionSpec::from_model(model);
    CHECK(adjusted_drift(from_model, 0.0, 100.0, 100.0) == doctest::Approx(adjusted_drift(spec, 0.0, 100.0, 100.0)));
}

TEST_CASE("PDE against the probabilistic representation at random points") {
    const auto spec = hm();
    const auto sol = solve(spec, call_on_x(100.0));
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> ux(75.0, 130.0), us(75.0, 130.0);
    for (int k = 0; k < 10; ++k) {
        const double x = ux(rng), s = us(rng);
        const auto mc = monte_carlo_representation(spec, 0.0, x, s, call_on_x(100.0), 40000, 500 + k);
        const double pde = sol.y_at(0, x, s);
        CHECK(std::abs(pde - mc.value) <= 3.0 * mc.std_error + 1e-2 * pde);
    }
}

TEST_CASE("grid refinement reduces the error") {
    const auto spec = hm();
    const double want = lognormal_call(100.0 * std::exp(hm_B()), 100.0, 0.09);
    GridConfig coarse;
    coarse.nx = coarse.ns = 31;
    GridConfig fine;
    fine.nx = fine.ns = 61;
    const double e1 = std::abs(solve(spec, call_on_x(100.0), coarse).h0() - want);
    const double e2 = std::abs(solve(spec, call_on_x(100.0), fine).h0() - want);
    CHECK(e2 * 1.5 <= e1);
}

TEST_CASE("boundary radius doubling changes little") {
    const auto spec = hm();
    GridConfig g1;
    GridConfig g2;
    g2.radius_stddevs = 12.0;
    g2.nx = g2.ns = 2 * g1.nx - 1;
    const double a = solve(spec, call_on_x(100.0), g1).h0();
    const double b = solve(spec, call_on_x(100.0), g2).h0();
    CHECK(std::abs(a - b) < 1e-3 * a);
}

TEST_CASE("stability and regime errors") {
    GridConfig g;
    g.nt = 5;
    CHECK_THROWS_AS(solve(hm(), call_on_x(100.0), g), CflError);
    GridConfig bad;
    bad.nx = 3;
    CHECK_THROWS_AS(solve(hm(), call_on_x(100.0), bad), DomainError);

    // Declared ellipticity band too narrow for the coefficients.
    auto f = [](double, double x, double s) { return Coefficients{0.0, 0.0, {0.3 * x, 0.0}, {0.0, 0.2 * s}}; };
    const auto spec = DiffusionSpec::bounded(f, 1.0, 2.0, 1.0, 100.0, 100.0);
    GridConfig small;
    small.nx = small.ns = 21;
    CHECK_THROWS_AS(solve(spec, call_on_x(100.0), small), RegimeError);
    small.allow_unproven_regime = true;
    const auto sol = solve(spec, call_on_x(100.0), small);
    CHECK(!sol.warnings.empty());

    // Payoff curvature at the edge.
    GridConfig narrow;
    narrow.radius_stddevs = 0.5;
    narrow.nx = narrow.ns = 21;
    const auto edgy = solve(hm(), [](double x, double) { return x * x; }, narrow);
    CHECK(!edgy.warnings.empty());
}

TEST_CASE("bounded-coefficient mode: PDE vs Euler representation") {
    // Bounded arithmetic volatilities on a moderate domain.
    auto f = [](double, double x, double s) {
        return Coefficients{0.5 * std::tanh(x / 100.0 - 1.0), 0.2, {12.0 + 2.0 * std::sin(s / 50.0), 3.0},
                            {15.0, 0.0}};
    };
    const auto spec = DiffusionSpec::bounded(f, 1.0, 1000.0, 0.5, 100.0, 100.0);
    GridConfig g;
    g.nx = g.ns = 61;
    g.radius_stddevs = 5.0;
    const auto sol = solve(spec, call_on_x(100.0), g);
    const auto mc = monte_carlo_representation(spec, 0.0, 100.0, 100.0, call_on_x(100.0), 20000, 11, 100);
    CHECK(std::abs(sol.h0() - mc.value) <= 3.0 * mc.std_error + 1e-2 * sol.h0());
}

TEST_CASE("csv dump") {
    GridConfig g;
    g.nx = g.ns = 7;
    g.snapshots = 2;
    const auto sol = solve(hm(), call_on_x(100.0), g);
    const std::string csv = sol.to_csv();
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 49);
}
