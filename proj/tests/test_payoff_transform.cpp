#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#include <cmath>
#include <numbers>

#include "qhedge/errors.hpp"
#include "qhedge/payoff_transform.hpp"

using namespace qhedge;

namespace {

std::vector<double> log_grid(double lo, double hi, int n) {
    std::vector<double> out;
    for (int i = 0; i < n; ++i) {
        out.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1)));
    }
    return out;
}

// Brute-force tail: Simpson on [U, U_far] of the strike kernel against s^z.
double brute_tail(double K, double R, double U, double s) {
    const double far = 20000.0;
    const int n = 4000000;
    const double h = (far - U) / n;
    std::complex<double> acc = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double u = U + i * h;
        const std::complex<double> z(R, u);
        const double c = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        acc += c * std::exp((1.0 - z) * std::log(K) + z * std::log(s)) / (z * (z - 1.0));
    }
    return 2.0 * (acc * h / 3.0 / (2.0 * std::numbers::pi)).real();
}

}  // namespace

TEST_CASE("call measure reproduces (s-K)^+ - s") {
    CHECK(evaluate(call_measure(1.0, 0.5), 3.0, 1.0).real() == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(evaluate(call_measure(1.0, 0.5), 3.0, 2.0).real() == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(evaluate(call_measure(1.0, 0.5), 1.0, std::exp(1.0)).real() == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(evaluate(call_measure(100.0, 0.5), 1.0, 80.0).real() == doctest::Approx(-80.0).epsilon(1e-9));
    for (double s : log_grid(1.0, 400.0, 40)) {
        const double want = std::max(s - 100.0, 0.0) - s;
        CHECK(std::abs(evaluate(call_measure(100.0), 1.0, s).real() - want) < 1e-6 * 101.0);
    }
}

TEST_CASE("call and put inversion on the strike-centred grid") {
    for (double K : {1.0, 50.0, 100.0, 150.0}) {
        for (double R : {0.2, 0.5, 0.8}) {
            const auto call = call_measure(K, R);
            for (double s : log_grid(K / 4, 4 * K, 50)) {
                const double want = std::max(s - K, 0.0) - s;
                CHECK(std::abs(evaluate(call, 1.0, s).real() - want) <= 1e-6 * (1.0 + K));
            }
        }
        for (double U : {0.4, 1.5, 2.0}) {
            const auto put = put_measure(K, U);
            for (double s : log_grid(K / 4, 4 * K, 50)) {
                CHECK(std::abs(evaluate(put, 1.0, s).real() - std::max(K - s, 0.0)) <= 1e-6 * (1.0 + K));
            }
        }
    }
}

TEST_CASE("put examples") {
    CHECK(std::abs(evaluate(put_measure(1.0, 2.0), 1.0, 1.0).real()) < 1e-9);
    CHECK(evaluate(put_measure(100.0, 2.0), 1.0, 80.0).real() == doctest::Approx(20.0).epsilon(1e-9));
    CHECK(std::abs(evaluate(put_measure(100.0, 1.5), 1.0, 120.0).real()) < 1e-6);
}

TEST_CASE("power claims are atoms") {
    CHECK(evaluate(power_claim({0.0, 1.0}), 5.0, 7.0) == std::complex<double>(7.0, 0.0));
    CHECK(evaluate(power_claim({0.0, 0.0}), 5.0, 7.0) == std::complex<double>(1.0, 0.0));
    CHECK(evaluate(power_claim({1.0, 0.0}, 2.0), 3.0, 7.0).real() == doctest::Approx(6.0));
    CHECK(evaluate(PayoffMeasure{}, 3.0, 7.0) == std::complex<double>(0.0, 0.0));
}

TEST_CASE("identity atom restores the call") {
    const auto m = power_claim({0.0, 1.0}) + call_measure(40.0);
    for (double s : log_grid(5.0, 200.0, 30)) {
        CHECK(std::abs(evaluate(m, 1.0, s).real() - std::max(s - 40.0, 0.0)) < 1e-6 * 41.0);
    }
}

TEST_CASE("call on X uses axis 1 and carries s through the fixed exponent") {
    auto m = call_measure(10.0, 0.5, Axis::x);
    CHECK(evaluate(m, 14.0, 3.0).real() == doctest::Approx(-10.0).epsilon(1e-8));
    CHECK(evaluate(m, 7.0, 3.0).real() == doctest::Approx(-7.0).epsilon(1e-8));
}

TEST_CASE("evaluate is linear in the measure") {
    const auto m1 = call_measure(90.0, 0.3);
    const auto m2 = put_measure(110.0, 1.5) + power_claim({0.5, 0.5}, 2.0);
    const std::complex<double> a(0.7, -0.2);
    const std::complex<double> b(-1.3, 0.4);
    const auto combo = m1.scaled(a) + m2.scaled(b);
    for (double s : {60.0, 95.0, 130.0}) {
        const auto lhs = evaluate(combo, 2.0, s);
        const auto rhs = a * evaluate(m1, 2.0, s) + b * evaluate(m2, 2.0, s);
        CHECK(std::abs(lhs - rhs) < 1e-7 * (1.0 + std::abs(rhs)));
    }
}

TEST_CASE("real payoffs evaluate with zero imaginary part") {
    const auto m = call_measure(100.0) + put_measure(80.0) + power_claim({0.0, 1.0});
    CHECK(m.encodes_real_payoff());
    for (double s : {30.0, 100.0, 300.0}) {
        CHECK(std::abs(evaluate(m, 1.0, s).imag()) < 1e-12);
    }
    // A custom density without declared symmetry is integrated over the full line.
    ContourLine line = call_measure(100.0).lines().front();
    const ContourLine ref = line;
    line.kernel = CustomDensity{[ref](double u) { return ref.kernel_at(u); }, false};
    const PayoffMeasure custom({}, {line});
    CHECK_FALSE(custom.encodes_real_payoff());
    const auto v = evaluate(custom, 1.0, 120.0);
    CHECK(std::abs(v.imag()) < 1e-8);
}

TEST_CASE("analytic contour tail matches brute-force integration") {
    ContourLine line = call_measure(1.0, 0.5).lines().front();
    line.truncation = 5.0;
    for (double s : {1.0, 1.02, 0.7, 3.0}) {
        const double got = strike_kernel_tail(line, 1.0, s).real();
        const double want = brute_tail(1.0, 0.5, 5.0, s);
        CAPTURE(s);
        CHECK(std::abs(got - want) < 2e-5);
    }
}

TEST_CASE("doubling the truncation stays within the declared tail bound") {
    for (double s : {50.0, 99.0, 180.0}) {
        ContourLine line = call_measure(100.0).lines().front();
        const double K = 100.0;
        const double bound = std::pow(K, 0.5) * std::pow(s, 0.5) / (std::numbers::pi * line.truncation);
        const double v1 = evaluate(PayoffMeasure({}, {line}), 1.0, s).real();
        line.truncation *= 2.0;
        const double v2 = evaluate(PayoffMeasure({}, {line}), 1.0, s).real();
        CHECK(std::abs(v2 - v1) < bound);
    }
}

TEST_CASE("closed form agrees with quadrature and is absent for custom densities") {
    const auto m = call_measure(100.0, 0.5, Axis::x) + power_claim({1.0, 0.0}) + put_measure(20.0, 0.5);
    for (double x : {70.0, 130.0}) {
        for (double s : {10.0, 30.0}) {
            CHECK(std::abs(m.closed_form(x, s).value() - evaluate(m, x, s)) < 1e-6 * 100.0);
        }
    }
    ContourLine line = call_measure(1.0).lines().front();
    line.kernel = CustomDensity{[](double) { return std::complex<double>(0.0); }, true};
    CHECK_FALSE(PayoffMeasure({}, {line}).closed_form(1.0, 1.0).has_value());
}

TEST_CASE("measure invariants: total variation finite, support bounded") {
    const auto m = call_measure(100.0) + power_claim({0.0, 1.0}, -2.0);
    const double tv = m.total_variation();
    CHECK(std::isfinite(tv));
    CHECK(tv > 2.0);
    const auto box = m.real_support_box();
    CHECK(box[2] == 0.5);
    CHECK(box[3] == 1.0);
    CHECK(m.digest() == (call_measure(100.0) + power_claim({0.0, 1.0}, -2.0)).digest());
    CHECK(m.digest() != call_measure(101.0).digest());
}

TEST_CASE("domain errors") {
    CHECK_THROWS_AS(call_measure(0.0, 0.5), DomainError);
    CHECK_THROWS_AS(call_measure(1.0, 1.0), DomainError);
    CHECK_THROWS_AS(call_measure(1.0, 0.0), DomainError);
    CHECK_THROWS_AS(put_measure(-1.0, 1.5), DomainError);
    CHECK_THROWS_AS(put_measure(1.0, 0.0), DomainError);
    CHECK_THROWS_AS(put_measure(1.0, 1.0), DomainError);
    CHECK_THROWS_AS(evaluate(call_measure(1.0), 0.0, 1.0), DomainError);
    CHECK_THROWS_AS(power_claim({std::complex<double>(NAN, 0.0), 0.0}), DomainError);
}

TEST_CASE("non-convergent quadrature reports its residual") {
    ContourLine line = call_measure(1.0).lines().front();
    line.panels = 2;
    line.truncation = 5000.0;
    try {
        (void)evaluate(PayoffMeasure({}, {line}), 1.0, 300.0);
        FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
        CHECK(e.residual() > 0.0);
    }
}

TEST_CASE("inversion on 50 points is fast") {
    const auto t0 = std::chrono::steady_clock::now();
    const auto m = call_measure(100.0);
    for (double s : log_grid(25.0, 400.0, 50)) {
        (void)evaluate(m, 1.0, s);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs < 1.0);
}
