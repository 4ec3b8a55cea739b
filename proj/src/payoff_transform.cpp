#include "qhedge/payoff_transform.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "qhedge/digest.hpp"
#include "qhedge/errors.hpp"

namespace qhedge {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool finite(cplx z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); }

void validate_line(const ContourLine& line) {
    if (!std::isfinite(line.abscissa) || !finite(line.fixed_exponent) || !finite(line.weight)) {
        throw DomainError("contour line: non-finite abscissa, exponent or weight");
    }
    if (!(line.truncation > 0.0) || !std::isfinite(line.truncation)) {
        throw DomainError("contour line: truncation must be positive and finite");
    }
    if (line.panels < 2) {
        throw DomainError("contour line: panel budget must be at least 2");
    }
    if (const auto* k = line.strike_kernel()) {
        if (!(k->strike > 0.0) || !std::isfinite(k->strike)) {
            throw DomainError("strike kernel: strike must be positive");
        }
        if (line.abscissa == 0.0 || line.abscissa == 1.0) {
            throw DomainError("strike kernel: abscissa sits on a pole (0 or 1)");
        }
    } else if (!std::get<CustomDensity>(line.kernel).density) {
        throw DomainError("custom density: empty function");
    }
}

// Integral over [U, inf) of e^{iuL} / (c + iu) du, L != 0.
cplx vertical_tail(double c, double L, double U) {
    const cplx arg(-c * L, -L * U);
    return cplx(0.0, -1.0) * std::exp(-c * L) * quad::expint_e1(arg);
}

}  // namespace

bool ComplexPair::finite() const noexcept { return qhedge::finite(z1) && qhedge::finite(z2); }

namespace {

cplx real_base_power(double base, cplx e) {
    if (e.imag() == 0.0) {
        return std::pow(base, e.real());
    }
    return std::exp(e * std::log(base));
}

}  // namespace

cplx power(double x, double s, const ComplexPair& z) {
    return real_base_power(x, z.z1) * real_base_power(s, z.z2);
}

cplx ContourLine::kernel_at(double u) const {
    if (const auto* k = strike_kernel()) {
        const cplx z(abscissa, u);
        return std::exp((1.0 - z) * std::log(k->strike)) / (kTwoPi * z * (z - 1.0));
    }
    return std::get<CustomDensity>(kernel).density(u);
}

ComplexPair ContourLine::point(double u) const {
    const cplx z(abscissa, u);
    return axis == Axis::s ? ComplexPair{fixed_exponent, z} : ComplexPair{z, fixed_exponent};
}

bool ContourLine::conjugate_symmetric() const {
    if (fixed_exponent.imag() != 0.0) {
        return false;
    }
    if (strike_kernel() != nullptr) {
        return true;
    }
    return std::get<CustomDensity>(kernel).conjugate_symmetric;
}

PayoffMeasure::PayoffMeasure(std::vector<Atom> atoms, std::vector<ContourLine> lines)
    : atoms_(std::move(atoms)), lines_(std::move(lines)) {
    for (const Atom& a : atoms_) {
        if (!a.point.finite() || !finite(a.weight)) {
            throw DomainError("atom: non-finite weight or frequency");
        }
    }
    for (const ContourLine& l : lines_) {
        validate_line(l);
    }
}

PayoffMeasure PayoffMeasure::scaled(cplx factor) const {
    PayoffMeasure out = *this;
    for (Atom& a : out.atoms_) {
        a.weight *= factor;
    }
    for (ContourLine& l : out.lines_) {
        l.weight *= factor;
    }
    return out;
}

PayoffMeasure operator+(const PayoffMeasure& a, const PayoffMeasure& b) {
    PayoffMeasure out = a;
    out.atoms_.insert(out.atoms_.end(), b.atoms_.begin(), b.atoms_.end());
    out.lines_.insert(out.lines_.end(), b.lines_.begin(), b.lines_.end());
    return out;
}

double PayoffMeasure::total_variation() const {
    double tv = 0.0;
    for (const Atom& a : atoms_) {
        tv += std::abs(a.weight);
    }
    for (const ContourLine& l : lines_) {
        quad::Options opt;
        opt.max_panels = l.panels;
        const auto r = quad::integrate<double>([&](double u) { return std::abs(l.kernel_at(u)); },
                                              -l.truncation, l.truncation, opt);
        tv += std::abs(l.weight) * r.value;
    }
    return tv;
}

std::array<double, 4> PayoffMeasure::real_support_box() const {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::array<double, 4> box{inf, -inf, inf, -inf};
    auto include = [&](double r1, double r2) {
        box[0] = std::min(box[0], r1);
        box[1] = std::max(box[1], r1);
        box[2] = std::min(box[2], r2);
        box[3] = std::max(box[3], r2);
    };
    for (const Atom& a : atoms_) {
        include(a.point.z1.real(), a.point.z2.real());
    }
    for (const ContourLine& l : lines_) {
        const ComplexPair p = l.point(0.0);
        include(p.z1.real(), p.z2.real());
    }
    return box;
}

bool PayoffMeasure::encodes_real_payoff() const {
    for (const Atom& a : atoms_) {
        if (a.weight.imag() != 0.0 || a.point.z1.imag() != 0.0 || a.point.z2.imag() != 0.0) {
            return false;
        }
    }
    for (const ContourLine& l : lines_) {
        if (l.weight.imag() != 0.0 || !l.conjugate_symmetric()) {
            return false;
        }
    }
    return true;
}

std::optional<cplx> PayoffMeasure::closed_form(double x, double s) const {
    cplx g = 0.0;
    for (const Atom& a : atoms_) {
        g += a.weight * power(x, s, a.point);
    }
    for (const ContourLine& l : lines_) {
        const auto* k = l.strike_kernel();
        if (k == nullptr) {
            return std::nullopt;
        }
        const double v = l.axis == Axis::s ? s : x;
        const double w = l.axis == Axis::s ? x : s;
        const double K = k->strike;
        double base = 0.0;
        if (l.abscissa > 1.0) {
            base = std::max(v - K, 0.0);
        } else if (l.abscissa > 0.0) {
            base = std::max(v - K, 0.0) - v;
        } else {
            base = std::max(K - v, 0.0);
        }
        g += l.weight * std::exp(l.fixed_exponent * std::log(w)) * base;
    }
    return g;
}

std::string PayoffMeasure::digest() const {
    std::ostringstream os;
    os << std::setprecision(17);
    for (const Atom& a : atoms_) {
        os << "atom " << a.weight << ' ' << a.point.z1 << ' ' << a.point.z2 << ';';
    }
    for (const ContourLine& l : lines_) {
        os << "line " << static_cast<int>(l.axis) << ' ' << l.fixed_exponent << ' ' << l.abscissa << ' '
           << l.weight << ' ' << l.truncation << ' ' << l.panels << ' ';
        if (const auto* k = l.strike_kernel()) {
            os << "strike " << k->strike;
        } else {
            // Custom densities are identified by their samples.
            os << "custom";
            for (double u : {0.0, 0.5, 1.0, 3.0, 10.0}) {
                os << ' ' << l.kernel_at(u);
            }
        }
        os << ';';
    }
    return fnv1a_hex(os.str());
}

PayoffMeasure call_measure(double strike, double abscissa, Axis axis) {
    if (!(strike > 0.0) || !std::isfinite(strike)) {
        throw DomainError("call_measure: strike must be positive");
    }
    if (!(abscissa > 0.0 && abscissa < 1.0)) {
        throw DomainError("call_measure: abscissa must lie in (0, 1)");
    }
    ContourLine line;
    line.axis = axis;
    line.abscissa = abscissa;
    line.kernel = StrikeKernel{strike};
    return PayoffMeasure({}, {line});
}

PayoffMeasure put_measure(double strike, double abscissa, Axis axis) {
    if (!(strike > 0.0) || !std::isfinite(strike)) {
        throw DomainError("put_measure: strike must be positive");
    }
    if (!(abscissa > 0.0) || abscissa == 1.0 || !std::isfinite(abscissa)) {
        throw DomainError("put_measure: abscissa must be positive and different from 1");
    }
    ContourLine line;
    line.axis = axis;
    line.abscissa = abscissa;
    line.kernel = StrikeKernel{strike};
    std::vector<Atom> atoms{{strike, ComplexPair{0.0, 0.0}}};
    if (abscissa > 1.0) {
        const ComplexPair id = axis == Axis::s ? ComplexPair{0.0, 1.0} : ComplexPair{1.0, 0.0};
        atoms.push_back({-1.0, id});
    }
    return PayoffMeasure(std::move(atoms), {line});
}

PayoffMeasure power_claim(ComplexPair z, cplx weight) { return PayoffMeasure({{weight, z}}, {}); }

PayoffMeasure collapse_onto_traded(const PayoffMeasure& measure) {
    std::vector<Atom> atoms;
    for (const Atom& a : measure.atoms()) {
        atoms.push_back({a.weight, ComplexPair{0.0, a.point.z1 + a.point.z2}});
    }
    std::vector<ContourLine> lines;
    for (ContourLine l : measure.lines()) {
        if (l.fixed_exponent.imag() != 0.0) {
            throw DomainError("collapse_onto_traded: complex fixed exponent");
        }
        if (l.axis == Axis::x) {
            // (R + iu, f) -> (0, R + f + iu): same density on a shifted contour
            // of s^{z}; a strike kernel stays a strike kernel only when f == 0.
            const double f = l.fixed_exponent.real();
            if (f != 0.0 && l.strike_kernel() != nullptr) {
                const ContourLine src = l;
                l.kernel = CustomDensity{[src](double u) { return src.kernel_at(u); }, true};
            }
            l.abscissa += f;
        }
        l.axis = Axis::s;
        l.fixed_exponent = 0.0;
        lines.push_back(l);
    }
    return PayoffMeasure(std::move(atoms), std::move(lines));
}

cplx strike_kernel_tail(const ContourLine& line, double x, double s) {
    const auto* k = line.strike_kernel();
    if (k == nullptr) {
        return 0.0;
    }
    const double v = line.axis == Axis::s ? s : x;
    const double w = line.axis == Axis::s ? x : s;
    const double L = std::log(v / k->strike);
    const double R = line.abscissa;
    const double U = line.truncation;
    // 1/(z(z-1)) = 1/(z-1) - 1/z, each piece integrated in closed form.
    cplx diff;
    if (std::abs(L) * U < 1e-10) {
        diff = cplx(0.0, 1.0) * std::log(cplx(R - 1.0, U) / cplx(R, U));
    } else {
        diff = vertical_tail(R - 1.0, L, U) - vertical_tail(R, L, U);
    }
    const cplx upper = k->strike / kTwoPi * std::exp(R * L) * diff;
    return std::exp(line.fixed_exponent * std::log(w)) * 2.0 * upper.real();
}

std::vector<quad::Node> line_nodes(const ContourLine& line, int panels) {
    const double lo = line.conjugate_symmetric() ? 0.0 : -line.truncation;
    return quad::composite_nodes(lo, line.truncation, panels);
}

cplx finish_line(const ContourLine& line, cplx raw_sum) {
    if (line.conjugate_symmetric()) {
        raw_sum = 2.0 * raw_sum.real();
    }
    return line.weight * raw_sum;
}

Evaluation evaluate_detailed(const PayoffMeasure& measure, double x, double s, const quad::Options& opt) {
    if (!(x > 0.0) || !(s > 0.0)) {
        throw DomainError("evaluate: x and s must be positive");
    }
    Evaluation out{0.0, {}};
    for (const Atom& a : measure.atoms()) {
        out.value += a.weight * power(x, s, a.point);
    }
    const double lx = std::log(x);
    const double ls = std::log(s);
    for (const ContourLine& line : measure.lines()) {
        quad::Options lo = opt;
        lo.max_panels = line.panels;
        const bool sym = line.conjugate_symmetric();
        const double a = sym ? 0.0 : -line.truncation;
        auto r = quad::integrate<cplx>(
            [&](double u) {
                const ComplexPair z = line.point(u);
                return line.kernel_at(u) * std::exp(z.z1 * lx + z.z2 * ls);
            },
            a, line.truncation, lo);
        if (!r.converged) {
            throw ConvergenceError("evaluate: contour quadrature did not stabilize", r.residual);
        }
        cplx raw = sym ? cplx(r.value.real(), 0.0) : r.value;
        if (sym) {
            raw *= 2.0;
        }
        const cplx tail = strike_kernel_tail(line, x, s);
        out.value += line.weight * (raw + tail);
        out.lines.push_back({r.residual, r.l1, r.panels, std::abs(tail)});
    }
    return out;
}

cplx evaluate(const PayoffMeasure& measure, double x, double s, const quad::Options& opt) {
    return evaluate_detailed(measure, x, s, opt).value;
}

}  // namespace qhedge
