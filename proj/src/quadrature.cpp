#include "qhedge/quadrature.hpp"

#include <numbers>

namespace qhedge::quad {

namespace {

Rule build_rule() {
    Rule r{};
    constexpr int n = kOrder;
    for (int i = 0; i < n / 2; ++i) {
        // Newton iteration on P_n from the Chebyshev-like initial guess.
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0;
            double p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) {
                break;
            }
        }
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        r.nodes[i] = -x;
        r.nodes[n - 1 - i] = x;
        r.weights[i] = w;
        r.weights[n - 1 - i] = w;
    }
    return r;
}

}  // namespace

const Rule& gauss_legendre16() {
    static const Rule rule = build_rule();
    return rule;
}

std::vector<Node> composite_nodes(double a, double b, int panels) {
    const Rule& r = gauss_legendre16();
    std::vector<Node> out;
    out.reserve(static_cast<std::size_t>(panels) * kOrder);
    const double h = (b - a) / panels;
    for (int p = 0; p < panels; ++p) {
        const double mid = a + (p + 0.5) * h;
        for (int k = 0; k < kOrder; ++k) {
            out.push_back({mid + 0.5 * h * r.nodes[k], 0.5 * h * r.weights[k]});
        }
    }
    return out;
}

std::vector<int> refinement_schedule(const Options& opt) {
    std::vector<int> out;
    const int budget = std::max(2, opt.max_panels);
    // At least two levels so every integral gets one refinement check.
    const int first = std::max(1, std::min(opt.initial_panels, budget / 2));
    for (int p = first; p <= budget; p *= 2) {
        out.push_back(p);
    }
    return out;
}

std::complex<double> expint_e1(std::complex<double> z) {
    using cd = std::complex<double>;
    constexpr double euler_gamma = 0.57721566490153286061;
    if (std::abs(z) <= 2.0) {
        // E1(z) = -gamma - log z - sum_{k>=1} (-z)^k / (k k!)
        cd sum = 0.0;
        cd term = 1.0;
        for (int k = 1; k < 200; ++k) {
            term *= -z / static_cast<double>(k);
            const cd add = term / static_cast<double>(k);
            sum += add;
            if (std::abs(add) < 1e-17 * std::max(1.0, std::abs(sum))) {
                break;
            }
        }
        return -euler_gamma - std::log(z) - sum;
    }
    // Modified Lentz evaluation of the continued fraction
    // E1(z) = e^{-z} / (z + 1 - 1^2/(z + 3 - 2^2/(z + 5 - ...))).
    constexpr double tiny = 1e-300;
    cd b = z + 1.0;
    cd c = 1.0 / tiny;
    cd d = 1.0 / b;
    cd h = d;
    for (int i = 1; i < 10000; ++i) {
        const double an = -static_cast<double>(i) * i;
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        const cd del = c * d;
        h *= del;
        if (std::abs(del - 1.0) < 1e-16) {
            break;
        }
    }
    return h * std::exp(-z);
}

}  // namespace qhedge::quad
