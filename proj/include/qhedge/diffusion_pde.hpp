#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qhedge/additive_models.hpp"

namespace qhedge {

/// SDE coefficients dX = b_X dt + sigma_X . dW, dS = b_S dt + sigma_S . dW at one point.
struct Coefficients {
    double b_x = 0.0;
    double b_s = 0.0;
    std::array<double, 2> sigma_x{0.0, 0.0};
    std::array<double, 2> sigma_s{0.0, 0.0};
};

using CoefficientFn = std::function<Coefficients(double t, double x, double s)>;

/// Proportional coefficients: b = x * b_hat, sigma = x * sigma_hat.
struct BlackScholesParams {
    double b_x = 0.0;
    double b_s = 0.0;
    std::array<double, 2> sigma_x{0.0, 0.0};
    std::array<double, 2> sigma_s{0.0, 0.0};
};

class DiffusionSpec {
public:
    enum class Mode { black_scholes, bounded };

    static DiffusionSpec black_scholes(const BlackScholesParams& p, double horizon, double x0, double s0);
    /// Non-traded asset U and traded S with excess drifts over r and correlation rho.
    static DiffusionSpec hulley_mcwalter(double mu_u, double mu_s, double r, double sigma_u, double sigma_s,
                                         double rho, double horizon, double x0, double s0);
    /// Black-Scholes diffusion with the same law as a jump-free additive model.
    static DiffusionSpec from_model(const AdditiveModel& model);
    /// Coefficients declared bounded with a(t,x,s) = sigma sigma^T uniformly elliptic,
    /// ellipticity_lo <= eig(a) <= ellipticity_hi; checked on the solver grid.
    static DiffusionSpec bounded(CoefficientFn f, double ellipticity_lo, double ellipticity_hi, double horizon,
                                 double x0, double s0);

    [[nodiscard]] Mode mode() const noexcept { return mode_; }
    [[nodiscard]] Coefficients at(double t, double x, double s) const;
    [[nodiscard]] double horizon() const noexcept { return horizon_; }
    [[nodiscard]] double x0() const noexcept { return x0_; }
    [[nodiscard]] double s0() const noexcept { return s0_; }
    [[nodiscard]] const std::optional<BlackScholesParams>& bs() const noexcept { return bs_; }
    [[nodiscard]] std::array<double, 2> ellipticity() const noexcept { return {lo_, hi_}; }

private:
    DiffusionSpec() = default;

    Mode mode_ = Mode::black_scholes;
    CoefficientFn fn_;
    std::optional<BlackScholesParams> bs_;
    double lo_ = 0.0;
    double hi_ = 0.0;
    double horizon_ = 0.0;
    double x0_ = 0.0;
    double s0_ = 0.0;
};

/// B = b_X - b_S <sigma_S, sigma_X> / |sigma_S|^2.
double adjusted_drift(const DiffusionSpec& spec, double t, double x, double s);

struct GridConfig {
    int nx = 121;
    int ns = 121;
    int nt = 0;  ///< 0 picks the step count from the target CFL number
    double radius_stddevs = 6.0;
    double target_cfl = 0.4;
    int snapshots = 11;  ///< stored time levels, evenly spaced, including 0 and T
    bool allow_unproven_regime = false;
};

using Payoff = std::function<double(double x, double s)>;

/// y and z on a (t, log x, log s) lattice; z is meaningful on the interior.
struct PdeSolution {
    std::vector<double> xi;   ///< log x nodes
    std::vector<double> eta;  ///< log s nodes
    std::vector<double> times;
    std::vector<std::vector<double>> y;  ///< [snapshot][i * eta.size() + j]
    std::vector<std::vector<double>> z;
    double dt = 0.0;
    int steps = 0;
    double cfl = 0.0;
    std::vector<std::string> warnings;
    double x0 = 0.0;
    double s0 = 0.0;

    /// Bicubic interpolation within the lattice.
    [[nodiscard]] double y_at(std::size_t snapshot, double x, double s) const;
    [[nodiscard]] double z_at(std::size_t snapshot, double x, double s) const;
    [[nodiscard]] double h0() const { return y_at(0, x0, s0); }
    /// Whether (x, s) lies at least `margin` nodes inside the lattice.
    [[nodiscard]] bool interior(double x, double s, int margin = 2) const;
    /// Rows "t,x,s,y,z" for every stored snapshot.
    [[nodiscard]] std::string to_csv() const;
};

/// Explicit finite differences for the terminal-value problem
///   d_t y + A y = 0, y(T) = g, with X drifting at B and S driftless,
/// in log coordinates with a 7-point stencil; edge values are extrapolated
/// linearly in the natural coordinates x and s.
PdeSolution solve(const DiffusionSpec& spec, const Payoff& g, const GridConfig& grid = {});

struct McEstimate {
    double value = 0.0;
    double std_error = 0.0;
};

/// y(t, x, s) = E[g(X~_T, S~_T)] with X~ drifting at B and S~ driftless: exact
/// lognormal sampling in Black-Scholes mode, log-Euler with `euler_steps` otherwise.
McEstimate monte_carlo_representation(const DiffusionSpec& spec, double t, double x, double s, const Payoff& g,
                                      int n_paths, std::uint64_t seed, int euler_steps = 200);

}  // namespace qhedge
