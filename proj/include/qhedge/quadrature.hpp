#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <span>
#include <vector>

namespace qhedge::quad {

/// Number of Gauss-Legendre nodes per panel.
inline constexpr int kOrder = 16;

/// Nodes and weights of the 16-point Gauss-Legendre rule on [-1, 1].
struct Rule {
    std::array<double, kOrder> nodes;
    std::array<double, kOrder> weights;
};

const Rule& gauss_legendre16();

struct Options {
    double rel_tol = 1e-8;
    int initial_panels = 8;
    int max_panels = 512;
};

/// One node of a composite rule: abscissa and (panel-scaled) weight.
struct Node {
    double x;
    double w;
};

/// Composite 16-point rule on [a, b] with `panels` equal panels.
std::vector<Node> composite_nodes(double a, double b, int panels);

/// Panel counts visited by doubling refinement: initial, 2*initial, ... <= max.
std::vector<int> refinement_schedule(const Options& opt);

template <class T>
struct Result {
    T value{};
    double residual = 0.0;  ///< |I_last - I_previous|
    double l1 = 0.0;        ///< quadrature estimate of the integral of |f|
    int panels = 0;
    bool converged = false;
};

/// True when two successive refinements agree to `rel_tol` relative to the
/// larger of |I| and the L1 mass (so integrals that cancel to zero still stop).
inline bool stable(double diff, double value_abs, double l1, double rel_tol) {
    const double scale = std::max(value_abs, l1);
    return diff <= rel_tol * scale || scale == 0.0;
}

/// Adaptive composite Gauss-Legendre by global panel doubling.
template <class T, class F>
Result<T> integrate(F&& f, double a, double b, const Options& opt = {}) {
    Result<T> out;
    bool have_prev = false;
    T prev{};
    for (int panels : refinement_schedule(opt)) {
        T sum{};
        double l1 = 0.0;
        for (const Node& n : composite_nodes(a, b, panels)) {
            const T v = f(n.x);
            sum += n.w * v;
            l1 += n.w * std::abs(v);
        }
        out.value = sum;
        out.l1 = l1;
        out.panels = panels;
        if (have_prev) {
            out.residual = std::abs(sum - prev);
            if (stable(out.residual, std::abs(sum), l1, opt.rel_tol)) {
                out.converged = true;
                return out;
            }
        }
        prev = sum;
        have_prev = true;
    }
    return out;
}

/// Exponential integral E1(z) = int_z^inf e^{-t}/t dt, principal branch (cut on the
/// negative real axis).
std::complex<double> expint_e1(std::complex<double> z);

}  // namespace qhedge::quad
