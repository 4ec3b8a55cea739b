#include "qhedge/additive_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "qhedge/digest.hpp"
#include "qhedge/errors.hpp"
#include "qhedge/quadrature.hpp"

namespace qhedge {

namespace {

constexpr ComplexPair kTraded{0.0, 1.0};

bool finite_all(std::initializer_list<double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

void validate(const LevyParams& p) {
    if (!finite_all({p.drift[0], p.drift[1], p.covariance.xx, p.covariance.xs, p.covariance.ss, p.jump_intensity,
                     p.jump_mean[0], p.jump_mean[1], p.jump_cov.xx, p.jump_cov.xs, p.jump_cov.ss})) {
        throw DomainError("model: non-finite parameter");
    }
    if (!p.covariance.psd()) {
        throw DomainError("model: covariance is not positive semidefinite");
    }
    if (!p.jump_cov.psd()) {
        throw DomainError("model: jump covariance is not positive semidefinite");
    }
    if (p.jump_intensity < 0.0) {
        throw DomainError("model: negative jump intensity");
    }
    if (!(p.variance_rate() > 0.0)) {
        throw AssumptionError(1, "rho^S is not strictly increasing (psi(0,2) - 2 psi(0,1) = " +
                                     std::to_string(p.variance_rate()) +
                                     "); the structure condition fails for a traded asset without variance");
    }
}

// E[h(Y)] for Y ~ N(mean, sd^2), splitting the range at +-1 where the
// generator's truncation indicator jumps.
double gaussian_expectation(const std::function<double(double)>& h, double mean, double sd) {
    if (sd == 0.0) {
        return h(mean);
    }
    const double lo = mean - 12.0 * sd;
    const double hi = mean + 12.0 * sd;
    std::vector<double> cuts{lo};
    for (double c : {-1.0, 1.0}) {
        if (c > lo && c < hi) {
            cuts.push_back(c);
        }
    }
    cuts.push_back(hi);
    const double norm = 1.0 / (sd * std::sqrt(2.0 * std::numbers::pi));
    double total = 0.0;
    quad::Options opt;
    opt.rel_tol = 1e-12;
    opt.initial_panels = 4;
    opt.max_panels = 4096;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        auto r = quad::integrate<double>(
            [&](double y) {
                const double d = (y - mean) / sd;
                return h(y) * norm * std::exp(-0.5 * d * d);
            },
            cuts[i], cuts[i + 1], opt);
        if (!r.converged) {
            throw ConvergenceError("generator check: jump-law quadrature did not converge", r.residual);
        }
        total += r.value;
    }
    return total;
}

}  // namespace

Sym2 Sym2::from_vols(double sd_x, double sd_s, double corr) {
    if (sd_x < 0.0 || sd_s < 0.0 || corr < -1.0 || corr > 1.0) {
        throw DomainError("volatilities must be nonnegative and correlation in [-1, 1]");
    }
    return {sd_x * sd_x, corr * sd_x * sd_s, sd_s * sd_s};
}

bool Sym2::psd(double tol) const {
    const double scale = std::max({std::abs(xx), std::abs(ss), 1.0});
    return xx >= -tol * scale && ss >= -tol * scale && xx * ss - xs * xs >= -tol * scale * scale;
}

cplx Sym2::quad_form(const ComplexPair& z) const { return xx * z.z1 * z.z1 + 2.0 * xs * z.z1 * z.z2 + ss * z.z2 * z.z2; }

cplx LevyParams::psi(const ComplexPair& z) const {
    cplx out = drift[0] * z.z1 + drift[1] * z.z2 + 0.5 * covariance.quad_form(z);
    if (jump_intensity > 0.0) {
        const cplx m = jump_mean[0] * z.z1 + jump_mean[1] * z.z2 + 0.5 * jump_cov.quad_form(z);
        out += jump_intensity * (std::exp(m) - 1.0);
    }
    return out;
}

cplx LevyParams::rho_rate(const ComplexPair& z, const ComplexPair& y) const {
    cplx out = covariance.xx * z.z1 * y.z1 + covariance.xs * (z.z1 * y.z2 + z.z2 * y.z1) + covariance.ss * z.z2 * y.z2;
    if (jump_intensity > 0.0) {
        auto mgf = [&](const ComplexPair& w) {
            return std::exp(jump_mean[0] * w.z1 + jump_mean[1] * w.z2 + 0.5 * jump_cov.quad_form(w));
        };
        out += jump_intensity * (mgf(z + y) - mgf(z) - mgf(y) + 1.0);
    }
    return out;
}

double LevyParams::variance_rate() const { return rho_rate(kTraded, kTraded).real(); }

AdditiveModel::AdditiveModel(ModelKind kind, std::vector<Segment> segments, double x0, double s0)
    : kind_(kind), segments_(std::move(segments)), x0_(x0), s0_(s0) {
    if (segments_.empty()) {
        throw DomainError("model: no time segments");
    }
    if (!(x0 > 0.0) || !(s0 > 0.0) || !std::isfinite(x0) || !std::isfinite(s0)) {
        throw DomainError("model: initial values must be positive");
    }
    double prev = 0.0;
    for (const Segment& seg : segments_) {
        if (!(seg.end > prev) || !std::isfinite(seg.end)) {
            throw DomainError("model: segment ends must be increasing and the horizon positive");
        }
        validate(seg.params);
        if (kind_ == ModelKind::black_scholes && seg.params.jump_intensity != 0.0) {
            throw DomainError("model: Black-Scholes kind cannot carry jumps");
        }
        prev = seg.end;
    }
    std::ostringstream os;
    os.precision(17);
    os << static_cast<int>(kind_) << ' ' << x0_ << ' ' << s0_;
    for (const Segment& seg : segments_) {
        const LevyParams& p = seg.params;
        os << " | " << seg.end << ' ' << p.drift[0] << ' ' << p.drift[1] << ' ' << p.covariance.xx << ' '
           << p.covariance.xs << ' ' << p.covariance.ss << ' ' << p.jump_intensity << ' ' << p.jump_mean[0] << ' '
           << p.jump_mean[1] << ' ' << p.jump_cov.xx << ' ' << p.jump_cov.xs << ' ' << p.jump_cov.ss;
    }
    digest_ = fnv1a_hex(os.str());
}

AdditiveModel AdditiveModel::black_scholes(std::array<double, 2> log_drift, double sigma_x, double sigma_s,
                                           double corr, double horizon, double x0, double s0) {
    LevyParams p;
    p.drift = log_drift;
    p.covariance = Sym2::from_vols(sigma_x, sigma_s, corr);
    return AdditiveModel(ModelKind::black_scholes, {{horizon, p}}, x0, s0);
}

AdditiveModel AdditiveModel::merton(const LevyParams& params, double horizon, double x0, double s0) {
    return AdditiveModel(ModelKind::merton, {{horizon, params}}, x0, s0);
}

bool AdditiveModel::has_jumps() const {
    return std::any_of(segments_.begin(), segments_.end(),
                       [](const Segment& s) { return s.params.jump_intensity > 0.0; });
}

std::size_t AdditiveModel::segment_at(double t) const {
    for (std::size_t k = 0; k < segments_.size(); ++k) {
        if (t < segments_[k].end) {
            return k;
        }
    }
    return segments_.size() - 1;
}

double AdditiveModel::overlap(std::size_t k, double a, double b) const {
    const double start = k == 0 ? 0.0 : segments_[k - 1].end;
    return std::max(0.0, std::min(b, segments_[k].end) - std::max(a, start));
}

cplx AdditiveModel::kappa(double t, const ComplexPair& z) const {
    cplx out = 0.0;
    for (std::size_t k = 0; k < segments_.size(); ++k) {
        const double len = overlap(k, 0.0, t);
        if (len > 0.0) {
            out += len * segments_[k].params.psi(z);
        }
    }
    return out;
}

cplx AdditiveModel::rho(double t, const ComplexPair& z, const ComplexPair& y) const {
    return kappa(t, z + y) - kappa(t, z) - kappa(t, y);
}

double AdditiveModel::rho_S(double t) const {
    double out = 0.0;
    for (std::size_t k = 0; k < segments_.size(); ++k) {
        out += overlap(k, 0.0, t) * segments_[k].params.variance_rate();
    }
    return out;
}

FrequencyRates AdditiveModel::rates(const ComplexPair& z) const {
    FrequencyRates r;
    for (const Segment& seg : segments_) {
        const LevyParams& p = seg.params;
        const cplx psi_z = p.psi(z);
        const cplx psi_traded = p.psi(kTraded);
        const cplx g = p.rho_rate(z, kTraded) / p.variance_rate();
        r.psi.push_back(psi_z);
        r.gamma.push_back(g);
        r.eta_rate.push_back(psi_z - g * psi_traded);
    }
    return r;
}

cplx AdditiveModel::gamma(double t, const FrequencyRates& r) const { return r.gamma[segment_at(t)]; }

cplx AdditiveModel::lambda(double t, const FrequencyRates& r) const {
    cplx exponent = 0.0;
    const double T = horizon();
    for (std::size_t k = 0; k < segments_.size(); ++k) {
        const double len = overlap(k, t, T);
        if (len > 0.0) {
            exponent += len * r.eta_rate[k];
        }
    }
    return std::exp(exponent);
}

cplx AdditiveModel::gamma(double t, const ComplexPair& z) const { return gamma(t, rates(z)); }

cplx AdditiveModel::eta(double t, const ComplexPair& z) const {
    const FrequencyRates r = rates(z);
    cplx out = 0.0;
    for (std::size_t k = 0; k < segments_.size(); ++k) {
        const double len = overlap(k, 0.0, t);
        if (len > 0.0) {
            out += len * r.eta_rate[k];
        }
    }
    return out;
}

cplx AdditiveModel::lambda(double t, const ComplexPair& z) const { return lambda(t, rates(z)); }

double AdditiveModel::tradeoff_at(double t) const {
    double out = 0.0;
    for (std::size_t k = 0; k < segments_.size(); ++k) {
        const LevyParams& p = segments_[k].params;
        const double drift = p.psi(kTraded).real();
        out += overlap(k, 0.0, t) * drift * drift / p.variance_rate();
    }
    return out;
}

TradeoffCurve AdditiveModel::tradeoff(std::span<const double> grid) const {
    TradeoffCurve c;
    double prev = -std::numeric_limits<double>::infinity();
    for (double t : grid) {
        if (t < 0.0 || t > horizon() || !(t > prev)) {
            throw DomainError("tradeoff: grid must be increasing within [0, T]");
        }
        prev = t;
        c.times.push_back(t);
        c.values.push_back(tradeoff_at(t));
    }
    return c;
}

double AdditiveModel::eta_growth_bound(std::span<const std::array<double, 2>> real_points, double reach,
                                       int samples) const {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& a : real_points) {
        for (int i = 0; i < samples; ++i) {
            const double u1 = -reach + 2.0 * reach * i / (samples - 1);
            for (int j = 0; j < samples; ++j) {
                const double u2 = -reach + 2.0 * reach * j / (samples - 1);
                const FrequencyRates r = rates({cplx(a[0], u1), cplx(a[1], u2)});
                for (std::size_t k = 0; k < segments_.size(); ++k) {
                    best = std::max(best, r.eta_rate[k].real() / segments_[k].params.variance_rate());
                }
            }
        }
    }
    return std::max(best, 0.0);
}

double JumpMarginal::c1() const {
    if (intensity == 0.0) {
        return 0.0;
    }
    return intensity * gaussian_expectation([](double y) { return std::abs(y) > 1.0 ? y : 0.0; }, mean, stddev);
}

double JumpMarginal::c2() const { return intensity * (mean * mean + stddev * stddev); }

JumpMarginal jump_marginal(const AdditiveModel& model, Axis axis, std::size_t segment) {
    const LevyParams& p = model.segments().at(segment).params;
    const int i = axis == Axis::x ? 0 : 1;
    const double var = i == 0 ? p.jump_cov.xx : p.jump_cov.ss;
    return {p.jump_intensity, p.jump_mean[i], std::sqrt(var)};
}

GeneratorCheck levy_generator_check(const JumpMarginal& m, const TestFunction& tf, double s, double dt) {
    if (!(dt > 0.0) || m.intensity < 0.0 || m.stddev < 0.0) {
        throw DomainError("generator check: need dt > 0 and a valid jump law");
    }
    const double f_s = tf.f(s);
    const double df_s = tf.df(s);
    const double generator =
        m.intensity *
        gaussian_expectation([&](double y) { return tf.f(s + y) - f_s - (std::abs(y) < 1.0 ? y * df_s : 0.0); },
                             m.mean, m.stddev);

    // Zero triplet drift: Lambda_t = CP_t - t int_{|y|<1} y nu(dy).
    const double small_mean =
        m.intensity * gaussian_expectation([](double y) { return std::abs(y) < 1.0 ? y : 0.0; }, m.mean, m.stddev);
    const double shift = s - dt * small_mean;
    const double mu = m.intensity * dt;
    double expectation = 0.0;
    double prob = std::exp(-mu);
    double cumulative = 0.0;
    for (int n = 0; n < 400 && cumulative < 1.0 - 1e-17; ++n) {
        if (n > 0) {
            prob *= mu / n;
        }
        cumulative += prob;
        const double e = gaussian_expectation([&](double y) { return tf.f(shift + y); }, n * m.mean,
                                              std::sqrt(static_cast<double>(n)) * m.stddev);
        expectation += prob * e;
    }
    const double fd = (expectation - f_s) / dt;
    return {fd, generator, fd - generator};
}

}  // namespace qhedge
