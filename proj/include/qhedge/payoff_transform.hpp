#pragma once

#include <array>
#include <complex>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "qhedge/quadrature.hpp"

namespace qhedge {

using cplx = std::complex<double>;

/// Fourier-Laplace frequency (z1, z2) of the power payoff x^{z1} s^{z2}.
struct ComplexPair {
    cplx z1;
    cplx z2;

    [[nodiscard]] bool finite() const noexcept;
    friend ComplexPair operator+(ComplexPair a, ComplexPair b) { return {a.z1 + b.z1, a.z2 + b.z2}; }
    friend bool operator==(const ComplexPair&, const ComplexPair&) = default;
};

/// x^{z1} s^{z2} for positive x, s.
cplx power(double x, double s, const ComplexPair& z);

/// Which coordinate carries a contour: the non-traded X or the traded S.
enum class Axis { x = 1, s = 2 };

/// Density K^{1-z} / (2 pi z (z-1)) at z = R + iu, the Mellin kernel of calls and puts.
struct StrikeKernel {
    double strike;
};

/// User supplied density u -> weight of the contour point R + iu.
struct CustomDensity {
    std::function<cplx(double)> density;
    bool conjugate_symmetric = false;  ///< density(-u) == conj(density(u))
};

/// Vertical contour {R + iu : |u| <= truncation} on one axis; the other
/// coordinate sits at `fixed_exponent`.
struct ContourLine {
    Axis axis = Axis::s;
    cplx fixed_exponent = 0.0;
    double abscissa = 0.5;
    cplx weight = 1.0;
    std::variant<StrikeKernel, CustomDensity> kernel = StrikeKernel{1.0};
    double truncation = 200.0;
    int panels = 512;  ///< panel budget of the adaptive rule

    /// Kernel value at u, excluding `weight`.
    [[nodiscard]] cplx kernel_at(double u) const;
    /// The frequency (z1, z2) of the contour point at u.
    [[nodiscard]] ComplexPair point(double u) const;
    /// Integrand pairs (u, -u) are conjugate so only u >= 0 needs integrating.
    [[nodiscard]] bool conjugate_symmetric() const;
    [[nodiscard]] const StrikeKernel* strike_kernel() const { return std::get_if<StrikeKernel>(&kernel); }
};

struct Atom {
    cplx weight;
    ComplexPair point;
};

/// Finite complex measure on C^2 made of atoms and vertical contour lines;
/// represents g(x, s) = int dPi(z1, z2) x^{z1} s^{z2}. Immutable.
class PayoffMeasure {
public:
    PayoffMeasure() = default;
    PayoffMeasure(std::vector<Atom> atoms, std::vector<ContourLine> lines);

    [[nodiscard]] const std::vector<Atom>& atoms() const noexcept { return atoms_; }
    [[nodiscard]] const std::vector<ContourLine>& lines() const noexcept { return lines_; }
    [[nodiscard]] bool empty() const noexcept { return atoms_.empty() && lines_.empty(); }

    [[nodiscard]] PayoffMeasure scaled(cplx factor) const;
    friend PayoffMeasure operator+(const PayoffMeasure& a, const PayoffMeasure& b);

    /// Sum of |atom weights| plus the truncated L1 mass of each line density.
    [[nodiscard]] double total_variation() const;

    /// Bounding box of the real support Re(supp Pi): {min Re z1, max Re z1, min Re z2, max Re z2}.
    [[nodiscard]] std::array<double, 4> real_support_box() const;

    /// True when the encoded payoff is real-valued for real x, s.
    [[nodiscard]] bool encodes_real_payoff() const;

    /// Exact payoff when every component has a known closed form (atoms and
    /// strike-kernel lines); empty if a custom density is present.
    [[nodiscard]] std::optional<cplx> closed_form(double x, double s) const;

    /// Stable 64-bit FNV-1a digest of the canonical description, as hex.
    [[nodiscard]] std::string digest() const;

private:
    std::vector<Atom> atoms_;
    std::vector<ContourLine> lines_;
};

/// (v - K)^+ - v on the chosen axis, contour at 0 < R < 1.
PayoffMeasure call_measure(double strike, double abscissa = 0.5, Axis axis = Axis::s);

/// (K - v)^+ on the chosen axis with the contour at abscissa U > 0, U != 1.
/// The kernel at U > 1 integrates to (v - K)^+ and at 0 < U < 1 to (v - K)^+ - v,
/// so the put is completed by parity atoms K - v (resp. K).
PayoffMeasure put_measure(double strike, double abscissa = 1.5, Axis axis = Axis::s);

/// Single atom: weight * x^{z1} s^{z2}.
PayoffMeasure power_claim(ComplexPair z, cplx weight = 1.0);

/// Image of the measure under (z1, z2) -> (0, z1 + z2), i.e. the payoff g(s, s)
/// obtained by pretending X and S coincide. Lines must have real fixed exponents.
PayoffMeasure collapse_onto_traded(const PayoffMeasure& measure);

/// Closed-form contribution of the contour tail |u| > U of a strike-kernel line
/// against the pure power x^{z1} s^{z2}, excluding the line weight.
cplx strike_kernel_tail(const ContourLine& line, double x, double s);

/// Quadrature nodes of a line at the given panel count: [0, U] for
/// conjugate-symmetric lines, [-U, U] otherwise.
std::vector<quad::Node> line_nodes(const ContourLine& line, int panels);

/// Turns a raw node sum into the line's contribution (doubling the real part on
/// conjugate-symmetric lines and applying the line weight).
cplx finish_line(const ContourLine& line, cplx raw_sum);

struct LineReport {
    double residual = 0.0;
    double l1 = 0.0;
    int panels = 0;
    double tail = 0.0;  ///< magnitude of the analytic tail correction applied
};

struct Evaluation {
    cplx value;
    std::vector<LineReport> lines;
};

/// g(x, s) by atoms plus adaptive contour quadrature; throws ConvergenceError
/// if a line does not stabilize within its panel budget.
Evaluation evaluate_detailed(const PayoffMeasure& measure, double x, double s,
                             const quad::Options& opt = {});

cplx evaluate(const PayoffMeasure& measure, double x, double s, const quad::Options& opt = {});

}  // namespace qhedge
