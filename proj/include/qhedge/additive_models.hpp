#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qhedge/payoff_transform.hpp"

namespace qhedge {

/// Symmetric 2x2 matrix over the (log X, log S) coordinates.
struct Sym2 {
    double xx = 0.0;
    double xs = 0.0;
    double ss = 0.0;

    /// From standard deviations and a correlation.
    static Sym2 from_vols(double sd_x, double sd_s, double corr);
    [[nodiscard]] bool psd(double tol = 1e-14) const;
    /// z^T M z for complex z.
    [[nodiscard]] cplx quad_form(const ComplexPair& z) const;
};

/// Per-unit-time characteristics of a bivariate Levy process: Brownian part
/// plus compound Poisson jumps with bivariate Gaussian sizes.
struct LevyParams {
    std::array<double, 2> drift{0.0, 0.0};
    Sym2 covariance;
    double jump_intensity = 0.0;
    std::array<double, 2> jump_mean{0.0, 0.0};
    Sym2 jump_cov;

    /// Levy exponent psi(z) = b.z + z^T Sigma z / 2 + lambda_J (exp(m.z + z^T Delta z / 2) - 1).
    [[nodiscard]] cplx psi(const ComplexPair& z) const;
    /// psi(z + y) - psi(z) - psi(y), expanded so the drift cancels exactly.
    [[nodiscard]] cplx rho_rate(const ComplexPair& z, const ComplexPair& y) const;
    /// Rate of the reference variance measure, psi(0,2) - 2 psi(0,1).
    [[nodiscard]] double variance_rate() const;
};

enum class ModelKind { black_scholes, merton };

/// Parameters in force on [previous end, end).
struct Segment {
    double end;
    LevyParams params;
};

/// t-independent per-frequency data, cached by callers that evaluate the same
/// frequency at many times.
struct FrequencyRates {
    std::vector<cplx> psi;       ///< psi_k(z) per segment
    std::vector<cplx> gamma;     ///< gamma_k(z) per segment
    std::vector<cplx> eta_rate;  ///< psi_k(z) - gamma_k(z) psi_k(0,1) per segment
};

/// Mean-variance trade-off K_t sampled on a time grid.
struct TradeoffCurve {
    std::vector<double> times;
    std::vector<double> values;
};

/// (X, S) = (exp Z1, exp Z2) for an additive process Z with piecewise constant
/// Levy characteristics. Validated at construction and immutable afterwards.
class AdditiveModel {
public:
    AdditiveModel(ModelKind kind, std::vector<Segment> segments, double x0, double s0);

    static AdditiveModel black_scholes(std::array<double, 2> log_drift, double sigma_x, double sigma_s,
                                       double corr, double horizon, double x0, double s0);
    static AdditiveModel merton(const LevyParams& params, double horizon, double x0, double s0);

    [[nodiscard]] ModelKind kind() const noexcept { return kind_; }
    [[nodiscard]] double horizon() const noexcept { return segments_.back().end; }
    [[nodiscard]] double x0() const noexcept { return x0_; }
    [[nodiscard]] double s0() const noexcept { return s0_; }
    [[nodiscard]] const std::vector<Segment>& segments() const noexcept { return segments_; }
    [[nodiscard]] bool time_homogeneous() const noexcept { return segments_.size() == 1; }
    [[nodiscard]] bool has_jumps() const;
    [[nodiscard]] const std::string& digest() const noexcept { return digest_; }

    /// Index of the segment governing the instant t (right-continuous, T -> last).
    [[nodiscard]] std::size_t segment_at(double t) const;
    /// Length of [a, b] intersected with segment k.
    [[nodiscard]] double overlap(std::size_t k, double a, double b) const;

    /// kappa_t(z) = log E[X_t^{z1} S_t^{z2}] - z.(log X0, log S0).
    [[nodiscard]] cplx kappa(double t, const ComplexPair& z) const;
    /// rho_t(z, y) = kappa_t(z + y) - kappa_t(z) - kappa_t(y).
    [[nodiscard]] cplx rho(double t, const ComplexPair& z, const ComplexPair& y) const;
    /// rho^S_t = kappa_t(0,2) - 2 kappa_t(0,1).
    [[nodiscard]] double rho_S(double t) const;
    /// gamma_t(z) = d rho_t(z, (0,1)) / d rho^S_t.
    [[nodiscard]] cplx gamma(double t, const ComplexPair& z) const;
    /// eta(z, t) = kappa_t(z) - int_0^t gamma_u(z) kappa_du(0,1).
    [[nodiscard]] cplx eta(double t, const ComplexPair& z) const;
    /// lambda(t, z) = exp(eta(z, T) - eta(z, t)); lambda(T, z) == 1 exactly.
    [[nodiscard]] cplx lambda(double t, const ComplexPair& z) const;

    [[nodiscard]] FrequencyRates rates(const ComplexPair& z) const;
    [[nodiscard]] cplx lambda(double t, const FrequencyRates& r) const;
    [[nodiscard]] cplx gamma(double t, const FrequencyRates& r) const;

    /// K_t = int_0^t (d kappa_u(0,1) / d rho^S_u)^2 d rho^S_u.
    [[nodiscard]] double tradeoff_at(double t) const;
    [[nodiscard]] TradeoffCurve tradeoff(std::span<const double> grid) const;

    /// Sampled estimate of c1 = sup Re(d eta / d rho^S) over the given real
    /// frequencies shifted by imaginary parts in [-reach, reach]^2; |lambda| is
    /// then bounded by exp(c1 rho^S_T).
    [[nodiscard]] double eta_growth_bound(std::span<const std::array<double, 2>> real_points,
                                          double reach = 40.0, int samples = 81) const;

private:
    ModelKind kind_;
    std::vector<Segment> segments_;
    double x0_;
    double s0_;
    std::string digest_;
};

/// One-dimensional compound Poisson law with N(mean, stddev^2) jump sizes
/// (stddev == 0 gives a point mass), no Brownian part, zero triplet drift.
struct JumpMarginal {
    double intensity = 0.0;
    double mean = 0.0;
    double stddev = 0.0;

    /// c1 = int_{|y|>1} y nu(dy).
    [[nodiscard]] double c1() const;
    /// c2 = int y^2 nu(dy).
    [[nodiscard]] double c2() const;
};

/// Jump part of the marginal of log X (Axis::x) or log S (Axis::s) on segment k.
JumpMarginal jump_marginal(const AdditiveModel& model, Axis axis, std::size_t segment = 0);

struct TestFunction {
    std::function<double(double)> f;
    std::function<double(double)> df;
};

struct GeneratorCheck {
    double finite_difference;  ///< (E f(s + Lambda_dt) - f(s)) / dt
    double generator;          ///< int (f(s+y) - f(s) - y f'(s) 1_{|y|<1}) nu(dy)
    double gap;
};

/// Compares the small-time difference quotient of the semigroup with the
/// integro-differential generator, both by quadrature over the jump law.
GeneratorCheck levy_generator_check(const JumpMarginal& marginal, const TestFunction& f, double s, double dt);

}  // namespace qhedge
