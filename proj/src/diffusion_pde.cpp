#include "qhedge/diffusion_pde.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "qhedge/errors.hpp"
#include "qhedge/rng.hpp"

namespace qhedge {

namespace {

double dot(const std::array<double, 2>& a, const std::array<double, 2>& b) { return a[0] * b[0] + a[1] * b[1]; }

void check_positive(double horizon, double x0, double s0) {
    if (!(horizon > 0.0) || !(x0 > 0.0) || !(s0 > 0.0)) {
        throw DomainError("diffusion: horizon and initial values must be positive");
    }
}

// Log-coordinate generator coefficients at one point.
struct LogCoefficients {
    double a_xi;
    double a_eta;
    double d_xixi;
    double d_etaeta;
    double d_xieta;  ///< coefficient of the mixed derivative
    double ratio;    ///< <sigma_S, sigma_X> / |sigma_S|^2
};

LogCoefficients log_coefficients(const DiffusionSpec& spec, double t, double x, double s) {
    const Coefficients c = spec.at(t, x, s);
    const double ss = dot(c.sigma_s, c.sigma_s);
    if (ss < 1e-12 * s * s) {
        throw DomainError("diffusion: |sigma_S|^2 vanishes at the point");
    }
    const double sx = dot(c.sigma_x, c.sigma_x);
    const double cov = dot(c.sigma_s, c.sigma_x);
    const double B = c.b_x - c.b_s * cov / ss;
    return {B / x - 0.5 * sx / (x * x), -0.5 * ss / (s * s), 0.5 * sx / (x * x), 0.5 * ss / (s * s), cov / (x * s),
            cov / ss};
}

// Value at p of the line through (p1, v1) and (p2, v2).
double extrapolate(double v1, double v2, double p1, double p2, double p) { return v1 + (v1 - v2) * (p - p1) / (p1 - p2); }

// 4-point Lagrange weights at v on the nodes p[0..3].
std::array<double, 4> lagrange_weights(const double* p, double v) {
    std::array<double, 4> w{};
    for (int a = 0; a < 4; ++a) {
        double num = 1.0, den = 1.0;
        for (int b = 0; b < 4; ++b) {
            if (b != a) {
                num *= v - p[b];
                den *= p[a] - p[b];
            }
        }
        w[a] = num / den;
    }
    return w;
}

// Bicubic interpolation in the natural coordinates (x, s) on the log lattice,
// so payoffs linear in x or s are reproduced exactly.
double bicubic(const std::vector<double>& xi, const std::vector<double>& eta, const std::vector<double>& v, double x,
               double s) {
    const double a = std::log(x), b = std::log(s);
    const double pa = (a - xi[0]) / (xi[1] - xi[0]);
    const double pb = (b - eta[0]) / (eta[1] - eta[0]);
    const long n = static_cast<long>(xi.size());
    const long m = static_cast<long>(eta.size());
    const double slack = 1e-9;
    if (pa < -slack || pb < -slack || pa > n - 1 + slack || pb > m - 1 + slack) {
        throw DomainError("PDE solution: point outside the lattice");
    }
    const long i = std::clamp(static_cast<long>(std::floor(pa)), 1L, n - 3);
    const long j = std::clamp(static_cast<long>(std::floor(pb)), 1L, m - 3);
    double px[4], ps[4];
    for (int k = 0; k < 4; ++k) {
        px[k] = std::exp(xi[i - 1 + k]);
        ps[k] = std::exp(eta[j - 1 + k]);
    }
    const auto wa = lagrange_weights(px, x);
    const auto wb = lagrange_weights(ps, s);
    double out = 0.0;
    for (int p = 0; p < 4; ++p) {
        for (int q = 0; q < 4; ++q) {
            out += wa[p] * wb[q] * v[(i - 1 + p) * m + (j - 1 + q)];
        }
    }
    return out;
}

}  // namespace

DiffusionSpec DiffusionSpec::black_scholes(const BlackScholesParams& p, double horizon, double x0, double s0) {
    check_positive(horizon, x0, s0);
    const double ss = dot(p.sigma_s, p.sigma_s);
    if (!(ss > 0.0)) {
        throw DomainError("diffusion: sigma_S must not vanish");
    }
    const double cov = dot(p.sigma_x, p.sigma_s);
    if (!(cov < std::sqrt(dot(p.sigma_x, p.sigma_x) * ss))) {
        throw RegimeError("Black-Scholes diffusion needs <sigma_X, sigma_S> < |sigma_X| |sigma_S|");
    }
    DiffusionSpec d;
    d.mode_ = Mode::black_scholes;
    d.bs_ = p;
    d.fn_ = [p](double, double x, double s) {
        return Coefficients{x * p.b_x, s * p.b_s, {x * p.sigma_x[0], x * p.sigma_x[1]},
                            {s * p.sigma_s[0], s * p.sigma_s[1]}};
    };
    d.horizon_ = horizon;
    d.x0_ = x0;
    d.s0_ = s0;
    return d;
}

DiffusionSpec DiffusionSpec::hulley_mcwalter(double mu_u, double mu_s, double r, double sigma_u, double sigma_s,
                                             double rho, double horizon, double x0, double s0) {
    if (rho < -1.0 || rho > 1.0) {
        throw DomainError("diffusion: correlation outside [-1, 1]");
    }
    BlackScholesParams p;
    p.b_s = mu_s - r;
    p.sigma_s = {sigma_s, 0.0};
    p.b_x = mu_u - r;
    p.sigma_x = {rho * sigma_u, std::sqrt(1.0 - rho * rho) * sigma_u};
    return black_scholes(p, horizon, x0, s0);
}

DiffusionSpec DiffusionSpec::from_model(const AdditiveModel& model) {
    if (model.has_jumps() || !model.time_homogeneous()) {
        throw RegimeError("diffusion route needs a time-homogeneous model without jumps");
    }
    const LevyParams& q = model.segments()[0].params;
    const Sym2& c = q.covariance;
    BlackScholesParams p;
    p.b_x = q.psi({1.0, 0.0}).real();
    p.b_s = q.psi({0.0, 1.0}).real();
    const double vs = std::sqrt(c.ss);
    p.sigma_s = {vs, 0.0};
    p.sigma_x = {c.xs / vs, std::sqrt(std::max(0.0, c.xx - c.xs * c.xs / c.ss))};
    return black_scholes(p, model.horizon(), model.x0(), model.s0());
}

DiffusionSpec DiffusionSpec::bounded(CoefficientFn f, double ellipticity_lo, double ellipticity_hi, double horizon,
                                     double x0, double s0) {
    check_positive(horizon, x0, s0);
    if (!(ellipticity_lo > 0.0) || !(ellipticity_hi >= ellipticity_lo) || !f) {
        throw DomainError("diffusion: need 0 < ellipticity_lo <= ellipticity_hi and a coefficient function");
    }
    DiffusionSpec d;
    d.mode_ = Mode::bounded;
    d.fn_ = std::move(f);
    d.lo_ = ellipticity_lo;
    d.hi_ = ellipticity_hi;
    d.horizon_ = horizon;
    d.x0_ = x0;
    d.s0_ = s0;
    return d;
}

Coefficients DiffusionSpec::at(double t, double x, double s) const { return fn_(t, x, s); }

double adjusted_drift(const DiffusionSpec& spec, double t, double x, double s) {
    const Coefficients c = spec.at(t, x, s);
    const double ss = dot(c.sigma_s, c.sigma_s);
    if (ss < 1e-12) {
        throw DomainError("adjusted drift: |sigma_S|^2 below 1e-12");
    }
    return c.b_x - c.b_s * dot(c.sigma_s, c.sigma_x) / ss;
}

double PdeSolution::y_at(std::size_t snapshot, double x, double s) const {
    return bicubic(xi, eta, y.at(snapshot), x, s);
}

double PdeSolution::z_at(std::size_t snapshot, double x, double s) const {
    return bicubic(xi, eta, z.at(snapshot), x, s);
}

bool PdeSolution::interior(double x, double s, int margin) const {
    const double a = std::log(x), b = std::log(s);
    const double dx = xi[1] - xi[0], de = eta[1] - eta[0];
    return a >= xi.front() + margin * dx && a <= xi.back() - margin * dx && b >= eta.front() + margin * de &&
           b <= eta.back() - margin * de;
}

std::string PdeSolution::to_csv() const {
    std::string out = "t,x,s,y,z\n";
    char buf[160];
    const std::size_t m = eta.size();
    for (std::size_t k = 0; k < times.size(); ++k) {
        for (std::size_t i = 0; i < xi.size(); ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.12g,%.12g\n", times[k], std::exp(xi[i]),
                              std::exp(eta[j]), y[k][i * m + j], z[k][i * m + j]);
                out += buf;
            }
        }
    }
    return out;
}

PdeSolution solve(const DiffusionSpec& spec, const Payoff& g, const GridConfig& grid) {
    if (grid.nx < 5 || grid.ns < 5 || grid.nt < 0 || !(grid.radius_stddevs > 0.0) || grid.snapshots < 2 ||
        !(grid.target_cfl > 0.0) || grid.target_cfl > 1.0) {
        throw DomainError("PDE grid: need nx, ns >= 5, nt >= 0, snapshots >= 2, radius > 0, 0 < target CFL <= 1");
    }
    const double T = spec.horizon();
    PdeSolution sol;
    sol.x0 = spec.x0();
    sol.s0 = spec.s0();

    // Lattice centred on the initial point, radius in standard deviations of log-price at T.
    const LogCoefficients c0 = log_coefficients(spec, 0.0, spec.x0(), spec.s0());
    const double sd_xi = std::sqrt(2.0 * c0.d_xixi * T);
    const double sd_eta = std::sqrt(2.0 * c0.d_etaeta * T);
    const double r_xi = grid.radius_stddevs * std::max(sd_xi, 1e-3) + std::abs(c0.a_xi) * T;
    const double r_eta = grid.radius_stddevs * std::max(sd_eta, 1e-3) + std::abs(c0.a_eta) * T;
    const int n = grid.nx, m = grid.ns;
    const double dxi = 2.0 * r_xi / (n - 1);
    const double deta = 2.0 * r_eta / (m - 1);
    for (int i = 0; i < n; ++i) {
        sol.xi.push_back(std::log(spec.x0()) - r_xi + i * dxi);
    }
    for (int j = 0; j < m; ++j) {
        sol.eta.push_back(std::log(spec.s0()) - r_eta + j * deta);
    }
    std::vector<double> xs(n), ss(m);
    for (int i = 0; i < n; ++i) {
        xs[i] = std::exp(sol.xi[i]);
    }
    for (int j = 0; j < m; ++j) {
        ss[j] = std::exp(sol.eta[j]);
    }

    auto coefficients_on_grid = [&](double t) {
        std::vector<LogCoefficients> out(static_cast<std::size_t>(n) * m);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < m; ++j) {
                out[i * m + j] = log_coefficients(spec, t, xs[i], ss[j]);
            }
        }
        return out;
    };

    // Regime and stability scan at a few times.
    double rate = 0.0;
    for (double t : {0.0, 0.5 * T, T}) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < m; ++j) {
                const LogCoefficients c = log_coefficients(spec, t, xs[i], ss[j]);
                rate = std::max(rate, 2.0 * c.d_xixi / (dxi * dxi) + 2.0 * c.d_etaeta / (deta * deta) +
                                          std::abs(c.d_xieta) / (dxi * deta));
                if (spec.mode() == DiffusionSpec::Mode::bounded) {
                    const Coefficients k = spec.at(t, xs[i], ss[j]);
                    const double axx = dot(k.sigma_x, k.sigma_x), ass = dot(k.sigma_s, k.sigma_s);
                    const double axs = dot(k.sigma_x, k.sigma_s);
                    const double mean = 0.5 * (axx + ass);
                    const double rad = std::sqrt(0.25 * (axx - ass) * (axx - ass) + axs * axs);
                    const auto [lo, hi] = spec.ellipticity();
                    if (mean - rad < lo * (1 - 1e-12) || mean + rad > hi * (1 + 1e-12)) {
                        const std::string msg = "diffusion matrix leaves the declared ellipticity band at (t, x, s) = (" +
                                                std::to_string(t) + ", " + std::to_string(xs[i]) + ", " +
                                                std::to_string(ss[j]) + ")";
                        if (!grid.allow_unproven_regime) {
                            throw RegimeError(msg);
                        }
                        if (sol.warnings.empty() || sol.warnings.back() != msg) {
                            sol.warnings.push_back(msg);
                        }
                    }
                }
            }
        }
    }
    int steps = grid.nt;
    if (steps == 0) {
        steps = std::max(1, static_cast<int>(std::ceil(T * rate / grid.target_cfl)));
    }
    sol.steps = steps;
    sol.dt = T / steps;
    sol.cfl = sol.dt * rate;
    if (sol.cfl > 1.0) {
        throw CflError("explicit scheme unstable: CFL number " + std::to_string(sol.cfl) + " exceeds 1 with nt = " +
                       std::to_string(steps));
    }

    std::vector<double> y(static_cast<std::size_t>(n) * m);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            y[i * m + j] = g(xs[i], ss[j]);
            if (!std::isfinite(y[i * m + j])) {
                throw DomainError("PDE: terminal payoff is not finite on the lattice");
            }
        }
    }

    // Payoff curvature near the edges means the truncation boundary is felt.
    {
        double inner = 0.0, edge = 0.0, size = 0.0;
        for (double v : y) {
            size = std::max(size, std::abs(v));
        }
        const int bx = std::max(1, n / 10), by = std::max(1, m / 10);
        // Deviation from linear interpolation in the natural coordinates.
        auto bend = [](double a, double b, double c, double pa, double pb, double pc) {
            const double w = (pb - pa) / (pc - pa);
            return std::abs(b - ((1.0 - w) * a + w * c));
        };
        for (int i = 1; i + 1 < n; ++i) {
            for (int j = 1; j + 1 < m; ++j) {
                const double cxx = bend(y[(i - 1) * m + j], y[i * m + j], y[(i + 1) * m + j], xs[i - 1], xs[i], xs[i + 1]);
                const double css = bend(y[i * m + j - 1], y[i * m + j], y[i * m + j + 1], ss[j - 1], ss[j], ss[j + 1]);
                const double curv = std::max(cxx, css);
                inner = std::max(inner, curv);
                if (i <= bx || i >= n - 1 - bx || j <= by || j >= m - 1 - by) {
                    edge = std::max(edge, curv);
                }
            }
        }
        if (edge > 1e-3 * inner && edge > 1e-10 * size) {
            sol.warnings.push_back("payoff is non-linear within 10% of the lattice edge; boundary may dominate");
        }
    }

    auto hedge_of = [&](const std::vector<double>& v, double t) {
        std::vector<double> z(v.size(), 0.0);
        for (int i = 1; i + 1 < n; ++i) {
            for (int j = 1; j + 1 < m; ++j) {
                const LogCoefficients c = log_coefficients(spec, t, xs[i], ss[j]);
                const double d_s = (v[i * m + j + 1] - v[i * m + j - 1]) / (ss[j + 1] - ss[j - 1]);
                const double d_x = (v[(i + 1) * m + j] - v[(i - 1) * m + j]) / (xs[i + 1] - xs[i - 1]);
                z[i * m + j] = d_s + c.ratio * d_x;
            }
        }
        // Edge values extrapolated linearly from the interior.
        for (int i = 1; i + 1 < n; ++i) {
            z[i * m] = extrapolate(z[i * m + 1], z[i * m + 2], ss[1], ss[2], ss[0]);
            z[i * m + m - 1] = extrapolate(z[i * m + m - 2], z[i * m + m - 3], ss[m - 2], ss[m - 3], ss[m - 1]);
        }
        for (int j = 0; j < m; ++j) {
            z[j] = extrapolate(z[m + j], z[2 * m + j], xs[1], xs[2], xs[0]);
            z[(n - 1) * m + j] = extrapolate(z[(n - 2) * m + j], z[(n - 3) * m + j], xs[n - 2], xs[n - 3], xs[n - 1]);
        }
        return z;
    };

    // Snapshot schedule in steps from 0.
    std::vector<int> snap_steps;
    for (int k = 0; k < grid.snapshots; ++k) {
        snap_steps.push_back(static_cast<int>(std::lround(static_cast<double>(k) * steps / (grid.snapshots - 1))));
    }
    snap_steps.erase(std::unique(snap_steps.begin(), snap_steps.end()), snap_steps.end());
    std::vector<std::vector<double>> ys(snap_steps.size()), zs(snap_steps.size());
    auto record = [&](int step) {
        for (std::size_t k = 0; k < snap_steps.size(); ++k) {
            if (snap_steps[k] == step) {
                ys[k] = y;
                zs[k] = hedge_of(y, step * sol.dt);
            }
        }
    };
    record(steps);

    const bool constant_coeffs = spec.mode() == DiffusionSpec::Mode::black_scholes;
    std::vector<LogCoefficients> coeffs = coefficients_on_grid(T);
    std::vector<double> next(y.size());
    const double fit_lo = std::exp(-0.5 * deta);
    const double fit_hi = std::exp(0.5 * deta);
    for (int step = steps - 1; step >= 0; --step) {
        const double t_hi = (step + 1) * sol.dt;
        if (!constant_coeffs) {
            coeffs = coefficients_on_grid(t_hi);
        }
        for (int i = 1; i + 1 < n; ++i) {
            for (int j = 1; j + 1 < m; ++j) {
                const LogCoefficients& c = coeffs[i * m + j];
                const double* r = &y[i * m + j];
                const double c0v = r[0];
                const double e = r[m], w = r[-m], nn = r[1], so = r[-1];
                const double y_xi = (e - w) / (2 * dxi);
                const double y_xixi = (e - 2 * c0v + w) / (dxi * dxi);
                // d (y'' - y') in eta, written as e^eta (e^-eta y')' so constants and s are exact.
                const double s_part = (fit_lo * (nn - c0v) - fit_hi * (c0v - so)) / (deta * deta);
                double y_cross;
                if (c.d_xieta >= 0.0) {
                    y_cross = (r[m + 1] - e - nn + 2 * c0v - w - so + r[-m - 1]) / (2 * dxi * deta);
                } else {
                    y_cross = -(r[m - 1] - e - so + 2 * c0v - w - nn + r[-m + 1]) / (2 * dxi * deta);
                }
                const double gen = c.a_xi * y_xi + c.d_xixi * y_xixi + c.d_etaeta * s_part + c.d_xieta * y_cross;
                next[i * m + j] = c0v + sol.dt * gen;
            }
        }
        for (int i = 1; i + 1 < n; ++i) {
            next[i * m] = extrapolate(next[i * m + 1], next[i * m + 2], ss[1], ss[2], ss[0]);
            next[i * m + m - 1] = extrapolate(next[i * m + m - 2], next[i * m + m - 3], ss[m - 2], ss[m - 3], ss[m - 1]);
        }
        for (int j = 0; j < m; ++j) {
            next[j] = extrapolate(next[m + j], next[2 * m + j], xs[1], xs[2], xs[0]);
            next[(n - 1) * m + j] = extrapolate(next[(n - 2) * m + j], next[(n - 3) * m + j], xs[n - 2], xs[n - 3], xs[n - 1]);
        }
        y.swap(next);
        for (double v : y) {
            if (!std::isfinite(v)) {
                throw CflError("PDE solution diverged");
            }
        }
        record(step);
    }
    for (std::size_t k = 0; k < snap_steps.size(); ++k) {
        sol.times.push_back(snap_steps[k] * sol.dt);
    }
    sol.y = std::move(ys);
    sol.z = std::move(zs);
    return sol;
}

McEstimate monte_carlo_representation(const DiffusionSpec& spec, double t, double x, double s, const Payoff& g,
                                      int n_paths, std::uint64_t seed, int euler_steps) {
    if (n_paths < 2 || !(x > 0.0) || !(s > 0.0) || t < 0.0 || t > spec.horizon() || euler_steps < 1) {
        throw DomainError("Monte Carlo representation: invalid arguments");
    }
    const double tau = spec.horizon() - t;
    auto rng = make_stream(seed, 0);
    std::normal_distribution<double> n01;
    double sum = 0.0, sum2 = 0.0;
    const double first = g(x, s);
    for (int p = 0; p < n_paths; ++p) {
        double xt = x, st = s;
        if (tau > 0.0) {
            if (const auto& bs = spec.bs()) {
                const double w1 = n01(rng) * std::sqrt(tau), w2 = n01(rng) * std::sqrt(tau);
                const double ss = dot(bs->sigma_s, bs->sigma_s);
                const double sx = dot(bs->sigma_x, bs->sigma_x);
                const double B = bs->b_x - bs->b_s * dot(bs->sigma_s, bs->sigma_x) / ss;
                xt = x * std::exp((B - 0.5 * sx) * tau + bs->sigma_x[0] * w1 + bs->sigma_x[1] * w2);
                st = s * std::exp(-0.5 * ss * tau + bs->sigma_s[0] * w1 + bs->sigma_s[1] * w2);
            } else {
                const double h = tau / euler_steps;
                double lx = std::log(x), ls = std::log(s);
                for (int k = 0; k < euler_steps; ++k) {
                    const double tk = t + k * h;
                    const double ex = std::exp(lx), es = std::exp(ls);
                    const Coefficients c = spec.at(tk, ex, es);
                    const double ss = dot(c.sigma_s, c.sigma_s);
                    const double B = c.b_x - c.b_s * dot(c.sigma_s, c.sigma_x) / ss;
                    const double w1 = n01(rng) * std::sqrt(h), w2 = n01(rng) * std::sqrt(h);
                    lx += (B / ex - 0.5 * dot(c.sigma_x, c.sigma_x) / (ex * ex)) * h +
                          (c.sigma_x[0] * w1 + c.sigma_x[1] * w2) / ex;
                    ls += -0.5 * ss / (es * es) * h + (c.sigma_s[0] * w1 + c.sigma_s[1] * w2) / es;
                }
                xt = std::exp(lx);
                st = std::exp(ls);
            }
        }
        // Shifted sums keep the variance exact for constant payoffs.
        const double v = g(xt, st) - first;
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n_paths;
    const double var = std::max(0.0, (sum2 - n_paths * mean * mean) / (n_paths - 1));
    return {first + mean, std::sqrt(var / n_paths)};
}

}  // namespace qhedge
