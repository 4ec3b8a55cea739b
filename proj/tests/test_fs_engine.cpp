#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#include <cmath>

#include "qhedge/errors.hpp"
#include "qhedge/fs_engine.hpp"

using namespace qhedge;

namespace {

double ncdf(double v) { return 0.5 * std::erfc(-v / std::sqrt(2.0)); }

// Undiscounted lognormal call with forward F and total variance v.
double lognormal_call(double F, double K, double v) {
    const double sd = std::sqrt(v);
    const double d1 = (std::log(F / K) + 0.5 * v) / sd;
    return F * ncdf(d1) - K * ncdf(d1 - sd);
}

double lognormal_call_delta(double F, double K, double v) {
    const double sd = std::sqrt(v);
    return ncdf((std::log(F / K) + 0.5 * v) / sd);
}

PayoffMeasure full_call(double K, Axis axis) {
    const ComplexPair id = axis == Axis::s ? ComplexPair{0.0, 1.0} : ComplexPair{1.0, 0.0};
    return call_measure(K, 0.5, axis) + power_claim(id);
}

struct HmParams {
    double mu_x = 0.10, mu_s = 0.08, r = 0.02, sig_x = 0.3, sig_s = 0.25, rho = 0.8;
};

AdditiveModel hm_model(const HmParams& p, double T = 1.0) {
    const double bx = p.mu_x - p.r - 0.5 * p.sig_x * p.sig_x;
    const double bs = p.mu_s - p.r - 0.5 * p.sig_s * p.sig_s;
    return AdditiveModel::black_scholes({bx, bs}, p.sig_x, p.sig_s, p.rho, T, 100.0, 100.0);
}

AdditiveModel merton_model() {
    LevyParams p;
    p.drift = {0.02, 0.04};
    p.covariance = Sym2::from_vols(0.25, 0.2, 0.7);
    p.jump_intensity = 0.5;
    p.jump_mean = {-0.05, -0.08};
    p.jump_cov = Sym2::from_vols(0.1, 0.12, 0.5);
    return AdditiveModel::merton(p, 1.0, 100.0, 100.0);
}

}  // namespace

TEST_CASE("claims S_T and 1 replicate exactly") {
    for (const AdditiveModel& m : {hm_model({}), merton_model()}) {
        const FSDecomposition stock(m, power_claim({0.0, 1.0}));
        const FSDecomposition one(m, power_claim({0.0, 0.0}));
        CHECK(stock.h0() == 100.0);
        CHECK(one.h0() == 1.0);
        for (double t : {0.0, 0.37, 1.0}) {
            for (double s : {3.0, 97.5, 240.0}) {
                const FSValue a = stock.value(t, 80.0, s);
                CHECK(a.y == cplx(s, 0.0));
                CHECK(a.z == cplx(1.0, 0.0));
                const FSValue b = one.value(t, 80.0, s);
                CHECK(b.y == cplx(1.0, 0.0));
                CHECK(b.z == cplx(0.0, 0.0));
            }
        }
        CHECK(residual_process_spec(stock).discrete_exact);
        CHECK(residual_process_spec(one).identically_zero);
    }
}

TEST_CASE("Black-Scholes call on S matches the zero-drift lognormal price") {
    const auto start = std::chrono::steady_clock::now();
    const HmParams p;
    const auto m = hm_model(p);
    for (double K : {80.0, 100.0, 130.0}) {
        const FSDecomposition dec(m, full_call(K, Axis::s));
        const double want = lognormal_call(100.0, K, p.sig_s * p.sig_s);
        CHECK(std::abs(dec.h0() - want) <= 1e-5 * want);
        CHECK(std::abs(dec.h0_complex().imag()) < 1e-10);
        // Delta of a complete-market call.
        for (double t : {0.3, 0.9, 0.996}) {
            const double v = p.sig_s * p.sig_s * (1.0 - t);
            for (double s : {70.0, 100.0, 140.0}) {
                const FSValue val = dec.value(t, 50.0, s);
                CHECK(std::abs(val.y.real() - lognormal_call(s, K, v)) < 1e-6 * (1 + K));
                CHECK(std::abs(val.z.real() - lognormal_call_delta(s, K, v)) < 1e-6);
            }
        }
        CHECK(!residual_process_spec(dec).discrete_exact);
        CHECK(residual_process_spec(dec).identically_zero);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CHECK(secs < 5.0);
}

TEST_CASE("basis-risk call on X prices under the adjusted drift") {
    const HmParams p;
    const auto m = hm_model(p);
    // Arithmetic drifts and the minimal-martingale adjustment.
    const double mx = p.mu_x - p.r, ms = p.mu_s - p.r;
    const double B = mx - ms * p.rho * p.sig_x / p.sig_s;
    for (double K : {90.0, 100.0, 115.0}) {
        const FSDecomposition dec(m, full_call(K, Axis::x));
        const double want = lognormal_call(100.0 * std::exp(B), K, p.sig_x * p.sig_x);
        CHECK(std::abs(dec.h0() - want) <= 1e-5 * want);
        const double t = 0.6;
        const FSValue v = dec.value(t, 105.0, 95.0);
        const double tau = 1.0 - t;
        CHECK(std::abs(v.y.real() - lognormal_call(105.0 * std::exp(B * tau), K, p.sig_x * p.sig_x * tau)) < 1e-6 * K);
        CHECK(!residual_process_spec(dec).identically_zero);
    }
}

TEST_CASE("terminal consistency and reality") {
    const auto m = merton_model();
    for (const PayoffMeasure& pm : {full_call(100.0, Axis::x), put_measure(95.0, 1.5, Axis::s), put_measure(95.0, 0.4, Axis::x)}) {
        const FSDecomposition dec(m, pm);
        for (double x : {40.0, 90.0, 100.0, 160.0}) {
            for (double s : {50.0, 100.0, 210.0}) {
                const FSValue v = dec.value(1.0, x, s);
                CHECK(std::abs(v.y - evaluate(pm, x, s)) <= 1e-6 * 101.0);
                CHECK(std::abs(v.y.real() - pm.closed_form(x, s)->real()) <= 1e-6 * 101.0);
                const FSValue w = dec.value(0.5, x, s);
                CHECK(std::abs(w.y.imag()) < 1e-12 * (1 + std::abs(w.y)));
                CHECK(std::abs(w.z.imag()) < 1e-12);
            }
        }
    }
}

TEST_CASE("linear-driver identity") {
    const auto m = merton_model();
    const FSDecomposition dec(m, full_call(100.0, Axis::x));
    const double psi_s = m.segments()[0].params.psi({0.0, 1.0}).real();
    const FrequencyWeight psi_weight = [&](const ComplexPair&, const FrequencyRates& r, double t) {
        return r.psi[m.segment_at(t)];
    };
    const double h = 1e-4 * m.horizon();
    for (double t : {0.2, 0.7}) {
        for (double x : {85.0, 100.0, 120.0}) {
            for (double s : {90.0, 110.0}) {
                const cplx dt = (dec.y(t + h, x, s) - dec.y(t - h, x, s)) / (2 * h);
                const cplx gen = dec.contour_integral(t, x, s, psi_weight);
                const cplx rhs = psi_s * s * dec.z(t, x, s);
                CHECK(std::abs(dt + gen - rhs) < 1e-5 * (1 + std::abs(gen)));
            }
        }
    }
}

TEST_CASE("hedge equals the generalized derivative in Black-Scholes") {
    const HmParams p;
    const auto m = hm_model(p);
    const FSDecomposition dec(m, full_call(100.0, Axis::x));
    const double ratio = p.rho * p.sig_x / p.sig_s;
    for (double t : {0.1, 0.5, 0.8}) {
        for (double x : {80.0, 100.0, 125.0}) {
            for (double s : {85.0, 100.0, 118.0}) {
                const double hx = 1e-3 * x, hs = 1e-3 * s;
                const double dx = (dec.y(t, x + hx, s).real() - dec.y(t, x - hx, s).real()) / (2 * hx);
                const double ds = (dec.y(t, x, s + hs).real() - dec.y(t, x, s - hs).real()) / (2 * hs);
                const double want = ds + ratio * (x / s) * dx;
                CHECK(std::abs(dec.z(t, x, s).real() - want) <= 1e-4 * std::abs(want));
            }
        }
    }
}

TEST_CASE("hedge surface") {
    const auto m = merton_model();
    const FSDecomposition dec(m, full_call(100.0, Axis::s));
    const std::vector<double> one_t{0.25}, one_x{90.0}, one_s{104.0};
    const HedgeSurface single = hedge_surface(dec, one_t, one_x, one_s);
    const FSValue v = dec.value(0.25, 90.0, 104.0);
    CHECK(single.y[0] == v.y);
    CHECK(single.z[0] == v.z);

    const std::vector<double> ts{0.0, 0.5, 1.0}, xs{80.0, 120.0};
    std::vector<double> ss;
    for (int i = 0; i < 25; ++i) {
        ss.push_back(50.0 + 5.0 * i);
    }
    const HedgeSurface surf = hedge_surface(dec, ts, xs, ss, 2);
    for (std::size_t j = 0; j < xs.size(); ++j) {
        for (std::size_t k = 0; k < ss.size(); ++k) {
            const double payoff = std::max(ss[k] - 100.0, 0.0);
            CHECK(std::abs(surf.y[surf.index(2, j, k)].real() - payoff) < 1e-6 * 101.0);
            if (k > 0) {
                for (std::size_t i = 0; i < 2; ++i) {
                    CHECK(surf.y[surf.index(i, j, k)].real() >= surf.y[surf.index(i, j, k - 1)].real());
                }
            }
            CHECK(surf.y[surf.index(1, j, k)] == dec.y(0.5, xs[j], ss[k]));
        }
    }
    const std::string csv = surf.to_csv();
    CHECK(csv.rfind("t,x,s,y,z\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(1 + ts.size() * xs.size() * ss.size()));
    const std::vector<double> unsorted{1.0, 0.5};
    CHECK_THROWS_AS((void)hedge_surface(dec, unsorted, xs, ss), DomainError);
}

TEST_CASE("hedge table agrees with pointwise evaluation") {
    const auto m = merton_model();
    for (const PayoffMeasure& pm : {full_call(100.0, Axis::x), put_measure(90.0, 1.5, Axis::s)}) {
        const FSDecomposition dec(m, pm);
        const std::vector<double> times{0.0, 0.5, 0.996};
        const HedgeTable table(dec, times);
        for (std::size_t i = 0; i < times.size(); ++i) {
            for (double x : {70.0, 99.3, 131.0}) {
                for (double s : {75.0, 100.7, 128.0}) {
                    const FSValue v = dec.value(times[i], x, s);
                    CHECK(std::abs(table.y(i, x, s) - v.y) < 1e-6 * (1 + std::abs(v.y)));
                    CHECK(std::abs(table.z(i, x, s) - v.z) < 1e-5 * (1 + std::abs(v.z)));
                }
            }
        }
        CHECK(table.fallbacks() == 0);
        const cplx far = table.y(1, 1e-4, 100.0);
        CHECK(std::abs(far - dec.y(0.5, 1e-4, 100.0)) < 1e-9);
        CHECK(table.fallbacks() >= (pm.lines()[0].axis == Axis::x ? 1u : 0u));
    }
    CHECK_THROWS_AS(HedgeTable(FSDecomposition(m, full_call(100.0, Axis::s)), {1.0}), DomainError);
}

TEST_CASE("contour extension near maturity") {
    const auto m = hm_model({});
    const FSDecomposition dec(m, full_call(100.0, Axis::x));
    CHECK(dec.truncation_at(0, 1.0) == 200.0);
    CHECK(dec.truncation_at(0, 0.999) > 200.0);
    CHECK(dec.truncation_at(0, 0.0) < 200.0);
}
