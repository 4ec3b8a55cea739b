#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qhedge/additive_models.hpp"
#include "qhedge/payoff_transform.hpp"

namespace qhedge {

struct FSOptions {
    quad::Options quadrature{};
    /// Before maturity the contour cut is the shortest of line.truncation * 2^k,
    /// -max_contractions <= k <= max_extensions, at which |lambda| * max(1, |gamma|)
    /// has dropped below this floor.
    double decay_floor = 1e-13;
    int max_extensions = 7;
    int max_contractions = 5;
    /// Largest tolerated |Im h0| relative to max(1, |h0|) for real claims.
    double imag_tolerance = 1e-5;
};

struct FSLineReport {
    double truncation = 0.0;
    int panels = 0;
    double residual_y = 0.0;
    double residual_z = 0.0;
    double l1 = 0.0;
    bool tail_applied = false;
    bool truncation_resolved = true;  ///< false when the integrand had not decayed at the cut
};

struct FSValue {
    cplx y;
    cplx z;
    std::vector<FSLineReport> lines;
};

/// Quadrature node of a contour line: abscissa u, quadrature weight times
/// kernel, the frequency and its cached rates.
struct ContourNode {
    double u;
    cplx kw;
    ComplexPair z;
    FrequencyRates rates;
};

struct ContourLevel {
    int panels;
    std::vector<ContourNode> nodes;
};

/// Weight w(z, rates, t) applied inside a frequency integral.
using FrequencyWeight = std::function<cplx(const ComplexPair&, const FrequencyRates&, double)>;

/// Price and hedge functions of the claim int dPi X_T^{z1} S_T^{z2}:
///   y(t, x, s) = int dPi x^{z1} s^{z2} lambda(t, z),
///   z(t, x, s) = int dPi x^{z1} s^{z2 - 1} lambda(t, z) gamma_t(z).
/// Copies share one lazily filled node cache; evaluation is thread safe.
class FSDecomposition {
public:
    FSDecomposition(AdditiveModel model, PayoffMeasure measure, FSOptions options = {});

    [[nodiscard]] const AdditiveModel& model() const noexcept;
    [[nodiscard]] const PayoffMeasure& measure() const noexcept;
    [[nodiscard]] const FSOptions& options() const noexcept;

    /// y and z at one point, sharing quadrature nodes.
    [[nodiscard]] FSValue value(double t, double x, double s) const;
    [[nodiscard]] cplx y(double t, double x, double s) const { return value(t, x, s).y; }
    [[nodiscard]] cplx z(double t, double x, double s) const { return value(t, x, s).z; }

    /// int dPi x^{z1} s^{z2} lambda(t, z) w(z, rates, t).
    [[nodiscard]] cplx contour_integral(double t, double x, double s, const FrequencyWeight& w) const;

    /// Initial capital y(0, X0, S0); real part for real claims.
    [[nodiscard]] double h0() const noexcept;
    [[nodiscard]] cplx h0_complex() const noexcept;
    /// Quadrature diagnostics of the h0 evaluation.
    [[nodiscard]] const std::vector<FSLineReport>& h0_report() const noexcept;

    /// Contour cut used for line `index` at time t.
    [[nodiscard]] double truncation_at(std::size_t index, double t) const;

    /// Refinement panel counts for line `index` at time t.
    [[nodiscard]] std::vector<int> panel_schedule(std::size_t index, double t) const;
    /// Cached nodes of line `index` for the cut in use at time t.
    [[nodiscard]] std::shared_ptr<const ContourLevel> contour_level(std::size_t index, double t, int panels) const;

    struct Impl;

private:
    std::shared_ptr<Impl> impl_;
};

FSDecomposition decompose(const AdditiveModel& model, const PayoffMeasure& measure, const FSOptions& options = {});

/// y and z tabulated on t x x x s, flattened with s fastest.
struct HedgeSurface {
    std::vector<double> t;
    std::vector<double> x;
    std::vector<double> s;
    std::vector<cplx> y;
    std::vector<cplx> z;

    [[nodiscard]] std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
        return (i * x.size() + j) * s.size() + k;
    }
    /// Rows "t,x,s,y,z" with real parts.
    [[nodiscard]] std::string to_csv() const;
};

HedgeSurface hedge_surface(const FSDecomposition& dec, std::span<const double> t_grid, std::span<const double> x_grid,
                           std::span<const double> s_grid, int threads = 1);

/// How the residual O is obtained from a simulated path.
struct ResidualRecipe {
    std::string formula;
    std::string discretization;
    /// O vanishes in continuous time (the claim is attainable).
    bool identically_zero = false;
    /// The claim lies in the span of {1, S_T}, so the discrete residual vanishes too.
    bool discrete_exact = false;
};

ResidualRecipe residual_process_spec(const FSDecomposition& dec);

/// y and z at fixed times, tabulated along the log of each line's axis variable
/// and read back by cubic interpolation; points off the table fall back to the
/// pointwise evaluation.
class HedgeTable {
public:
    struct Options {
        int points = 4001;
        double radius_stddevs = 8.0;
    };

    HedgeTable(const FSDecomposition& dec, std::vector<double> times, Options options);
    HedgeTable(const FSDecomposition& dec, std::vector<double> times) : HedgeTable(dec, std::move(times), Options{}) {}

    [[nodiscard]] const std::vector<double>& times() const noexcept { return times_; }
    [[nodiscard]] cplx y(std::size_t time_index, double x, double s) const;
    [[nodiscard]] cplx z(std::size_t time_index, double x, double s) const;
    /// Count of evaluations served by the pointwise fallback.
    [[nodiscard]] std::size_t fallbacks() const noexcept { return fallbacks_; }

private:
    struct AtomSlice {
        cplx lambda;
        cplx gamma;
    };
    struct Slice {
        double lo = 0.0;
        double step = 0.0;
        std::vector<cplx> fy;
        std::vector<cplx> fz;
    };

    [[nodiscard]] cplx lookup(std::size_t time_index, double x, double s, bool hedge) const;

    FSDecomposition dec_;
    std::vector<double> times_;
    std::vector<std::vector<Slice>> slices_;     // [time][line]
    std::vector<std::vector<AtomSlice>> atoms_;  // [time][atom]
    mutable std::atomic<std::size_t> fallbacks_{0};
};

}  // namespace qhedge
