#include "qhedge/fs_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include "qhedge/errors.hpp"

namespace qhedge {

namespace {

using NodeData = ContourNode;
using Level = ContourLevel;

struct LineSums {
    cplx y;
    cplx z;
    FSLineReport report;
};

// Panel counts follow the contour length when it is extended; shortened
// contours keep the base counts.
int scaled_panels(int panels, int ext) { return ext > 0 ? panels << ext : panels; }

// Nodes on [0, U] (or [-U, U]) with geometrically graded panels near u = 0,
// where the kernel poles sit close to the contour, and `panels` equal panels
// beyond.
std::vector<quad::Node> graded_nodes(const ContourLine& line, double U, int panels) {
    double d = 0.25;
    if (line.strike_kernel() != nullptr) {
        d = std::min(std::abs(line.abscissa), std::abs(line.abscissa - 1.0));
    }
    const double inner_end = std::min(U, 16.0 * d);
    std::vector<double> edges{0.0};
    for (double e = d; e < inner_end; e *= 2.0) {
        edges.push_back(e);
    }
    edges.push_back(inner_end);
    const int split = std::max(1, panels / 32);
    std::vector<quad::Node> half;
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
        auto part = quad::composite_nodes(edges[i], edges[i + 1], split);
        half.insert(half.end(), part.begin(), part.end());
    }
    if (inner_end < U) {
        auto part = quad::composite_nodes(inner_end, U, panels);
        half.insert(half.end(), part.begin(), part.end());
    }
    if (line.conjugate_symmetric()) {
        return half;
    }
    std::vector<quad::Node> full;
    full.reserve(2 * half.size());
    for (auto it = half.rbegin(); it != half.rend(); ++it) {
        full.push_back({-it->x, it->w});
    }
    full.insert(full.end(), half.begin(), half.end());
    return full;
}

std::string coordinates(double t, double x, double s) {
    std::ostringstream os;
    os << " at (t, x, s) = (" << t << ", " << x << ", " << s << ")";
    return os.str();
}

}  // namespace

struct FSDecomposition::Impl {
    AdditiveModel model;
    PayoffMeasure measure;
    FSOptions opt;
    std::vector<FrequencyRates> atom_rates;
    cplx h0{};
    std::vector<FSLineReport> h0_report;

    mutable std::mutex mutex;
    mutable std::map<std::tuple<std::size_t, int, int>, std::shared_ptr<const Level>> cache;

    Impl(AdditiveModel m, PayoffMeasure p, FSOptions o) : model(std::move(m)), measure(std::move(p)), opt(o) {}

    std::shared_ptr<const Level> level(std::size_t index, int ext, int panels) const {
        std::lock_guard lock(mutex);
        auto& slot = cache[{index, ext, panels}];
        if (!slot) {
            const ContourLine& line = measure.lines()[index];
            const double U = line.truncation * std::ldexp(1.0, ext);
            auto lv = std::make_shared<Level>();
            lv->panels = panels;
            for (const quad::Node& n : graded_nodes(line, U, panels)) {
                const ComplexPair z = line.point(n.x);
                lv->nodes.push_back({n.x, n.w * line.kernel_at(n.x), z, model.rates(z)});
            }
            slot = std::move(lv);
        }
        return slot;
    }

    // Number of doublings of the contour cut so the integrand has decayed at time t.
    std::pair<int, bool> extension(std::size_t index, double t) const {
        if (t >= model.horizon()) {
            return {0, true};
        }
        const ContourLine& line = measure.lines()[index];
        for (int ext = -opt.max_contractions; ext <= opt.max_extensions; ++ext) {
            const double U = line.truncation * std::ldexp(1.0, ext);
            double mag = 0.0;
            for (double u : {U, -U}) {
                const FrequencyRates r = model.rates(line.point(u));
                mag = std::max(mag, std::abs(model.lambda(t, r)) * std::max(1.0, std::abs(model.gamma(t, r))));
                if (line.conjugate_symmetric()) {
                    break;
                }
            }
            if (mag <= opt.decay_floor) {
                return {ext, true};
            }
        }
        return {opt.max_extensions, false};
    }

    quad::Options panel_options(std::size_t index, int ext) const {
        quad::Options q = opt.quadrature;
        q.initial_panels = scaled_panels(opt.quadrature.initial_panels, ext);
        q.max_panels = scaled_panels(measure.lines()[index].panels, ext);
        return q;
    }

    LineSums line_sums(std::size_t index, double t, double x, double s, const FrequencyWeight* weight) const {
        const ContourLine& line = measure.lines()[index];
        const auto [ext, resolved] = extension(index, t);
        const quad::Options q = panel_options(index, ext);
        const double lx = std::log(x);
        const double ls = std::log(s);
        const bool hedge = weight == nullptr;
        const std::size_t seg = model.segment_at(t);

        LineSums out{};
        out.report.truncation = line.truncation * std::ldexp(1.0, ext);
        out.report.truncation_resolved = resolved;
        bool have_prev = false;
        cplx prev_y{}, prev_z{};
        bool converged = false;
        for (int panels : quad::refinement_schedule(q)) {
            const auto lv = level(index, ext, panels);
            cplx sy{}, sz{};
            double ly = 0.0, lz = 0.0;
            for (const NodeData& n : lv->nodes) {
                const cplx base = n.kw * std::exp(n.z.z1 * lx + n.z.z2 * ls) * model.lambda(t, n.rates);
                const cplx vy = hedge ? base : base * (*weight)(n.z, n.rates, t);
                sy += vy;
                ly += std::abs(vy);
                if (hedge) {
                    const cplx vz = base * n.rates.gamma[seg];
                    sz += vz;
                    lz += std::abs(vz);
                }
            }
            out.y = sy;
            out.z = sz;
            out.report.panels = panels;
            out.report.l1 = ly;
            if (have_prev) {
                out.report.residual_y = std::abs(sy - prev_y);
                out.report.residual_z = std::abs(sz - prev_z);
                if (quad::stable(out.report.residual_y, std::abs(sy), ly, q.rel_tol) &&
                    quad::stable(out.report.residual_z, std::abs(sz), lz, q.rel_tol)) {
                    converged = true;
                    break;
                }
            }
            prev_y = sy;
            prev_z = sz;
            have_prev = true;
        }
        if (!converged) {
            throw ConvergenceError("F-S contour quadrature did not stabilize" + coordinates(t, x, s),
                                   std::max(out.report.residual_y, out.report.residual_z));
        }
        out.y = finish_line(line, out.y);
        out.z = finish_line(line, out.z) / s;
        if (t >= model.horizon() && hedge && line.strike_kernel() != nullptr) {
            out.y += line.weight * strike_kernel_tail(line, x, s);
            out.report.tail_applied = true;
        }
        return out;
    }

    FSValue value(double t, double x, double s, const FrequencyWeight* weight) const {
        if (!(x > 0.0) || !(s > 0.0) || !std::isfinite(x) || !std::isfinite(s)) {
            throw DomainError("F-S evaluation: x and s must be positive");
        }
        if (!(t >= 0.0) || t > model.horizon()) {
            throw DomainError("F-S evaluation: t must lie in [0, T]");
        }
        FSValue v{};
        const std::size_t seg = model.segment_at(t);
        for (std::size_t i = 0; i < measure.atoms().size(); ++i) {
            const Atom& a = measure.atoms()[i];
            const FrequencyRates& r = atom_rates[i];
            const cplx base = a.weight * power(x, s, a.point) * model.lambda(t, r);
            if (weight == nullptr) {
                v.y += base;
                if (r.gamma[seg] != 0.0) {
                    v.z += a.weight * power(x, s, {a.point.z1, a.point.z2 - 1.0}) * model.lambda(t, r) * r.gamma[seg];
                }
            } else {
                v.y += base * (*weight)(a.point, r, t);
            }
        }
        for (std::size_t i = 0; i < measure.lines().size(); ++i) {
            LineSums ls = line_sums(i, t, x, s, weight);
            v.y += ls.y;
            v.z += ls.z;
            v.lines.push_back(ls.report);
        }
        return v;
    }
};

FSDecomposition::FSDecomposition(AdditiveModel model, PayoffMeasure measure, FSOptions options)
    : impl_(std::make_shared<Impl>(std::move(model), std::move(measure), options)) {
    Impl& im = *impl_;
    for (const Atom& a : im.measure.atoms()) {
        im.atom_rates.push_back(im.model.rates(a.point));
    }
    const auto box = im.measure.real_support_box();
    for (double b : box) {
        if (std::isnan(b)) {
            throw AssumptionError(2, "real support of the payoff measure is not bounded");
        }
    }
    const FSValue v = im.value(0.0, im.model.x0(), im.model.s0(), nullptr);
    im.h0 = v.y;
    im.h0_report = v.lines;
    if (im.measure.encodes_real_payoff() &&
        std::abs(im.h0.imag()) > im.opt.imag_tolerance * std::max(1.0, std::abs(im.h0.real()))) {
        throw ConvergenceError("initial capital of a real claim has an imaginary residue", std::abs(im.h0.imag()));
    }
}

const AdditiveModel& FSDecomposition::model() const noexcept { return impl_->model; }
const PayoffMeasure& FSDecomposition::measure() const noexcept { return impl_->measure; }
const FSOptions& FSDecomposition::options() const noexcept { return impl_->opt; }

FSValue FSDecomposition::value(double t, double x, double s) const { return impl_->value(t, x, s, nullptr); }

cplx FSDecomposition::contour_integral(double t, double x, double s, const FrequencyWeight& w) const {
    return impl_->value(t, x, s, &w).y;
}

double FSDecomposition::h0() const noexcept { return impl_->h0.real(); }
cplx FSDecomposition::h0_complex() const noexcept { return impl_->h0; }
const std::vector<FSLineReport>& FSDecomposition::h0_report() const noexcept { return impl_->h0_report; }

double FSDecomposition::truncation_at(std::size_t index, double t) const {
    const ContourLine& line = impl_->measure.lines().at(index);
    return line.truncation * std::ldexp(1.0, impl_->extension(index, t).first);
}

std::vector<int> FSDecomposition::panel_schedule(std::size_t index, double t) const {
    (void)impl_->measure.lines().at(index);
    return quad::refinement_schedule(impl_->panel_options(index, impl_->extension(index, t).first));
}

std::shared_ptr<const ContourLevel> FSDecomposition::contour_level(std::size_t index, double t, int panels) const {
    (void)impl_->measure.lines().at(index);
    return impl_->level(index, impl_->extension(index, t).first, panels);
}

FSDecomposition decompose(const AdditiveModel& model, const PayoffMeasure& measure, const FSOptions& options) {
    return FSDecomposition(model, measure, options);
}

std::string HedgeSurface::to_csv() const {
    std::string out = "t,x,s,y,z\n";
    char buf[160];
    for (std::size_t i = 0; i < t.size(); ++i) {
        for (std::size_t j = 0; j < x.size(); ++j) {
            for (std::size_t k = 0; k < s.size(); ++k) {
                const std::size_t n = index(i, j, k);
                std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.12g,%.12g\n", t[i], x[j], s[k], y[n].real(),
                              z[n].real());
                out += buf;
            }
        }
    }
    return out;
}

HedgeSurface hedge_surface(const FSDecomposition& dec, std::span<const double> t_grid, std::span<const double> x_grid,
                           std::span<const double> s_grid, int threads) {
    auto check = [](std::span<const double> g, bool positive, const char* name) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            if ((positive && !(g[i] > 0.0)) || (!positive && !(g[i] >= 0.0)) || (i > 0 && !(g[i] > g[i - 1]))) {
                throw DomainError(std::string("hedge surface: ") + name + " grid must be sorted and in range");
            }
        }
    };
    check(t_grid, false, "t");
    check(x_grid, true, "x");
    check(s_grid, true, "s");
    HedgeSurface out{{t_grid.begin(), t_grid.end()}, {x_grid.begin(), x_grid.end()}, {s_grid.begin(), s_grid.end()}, {}, {}};
    const std::size_t total = t_grid.size() * x_grid.size() * s_grid.size();
    out.y.resize(total);
    out.z.resize(total);
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, std::max<std::size_t>(total, 1)));
    std::vector<std::exception_ptr> errors(workers);
    auto work = [&](std::size_t w) {
        try {
            for (std::size_t n = w; n < total; n += workers) {
                const std::size_t k = n % s_grid.size();
                const std::size_t j = (n / s_grid.size()) % x_grid.size();
                const std::size_t i = n / (s_grid.size() * x_grid.size());
                const FSValue v = dec.value(t_grid[i], x_grid[j], s_grid[k]);
                out.y[n] = v.y;
                out.z[n] = v.z;
            }
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(work, w);
        }
        for (auto& th : pool) {
            th.join();
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return out;
}

ResidualRecipe residual_process_spec(const FSDecomposition& dec) {
    ResidualRecipe r;
    r.formula = "O_t = Y_t - Y_0 - int_0^t Z_u dS_u with Y_t = y(t, X_t, S_t), Z_u = z(u, X_{u-}, S_{u-})";
    r.discretization =
        "O_{t_n} = y(t_n, X_n, S_n) - h0 - sum_{i<n} z(t_i, X_i, S_i) (S_{i+1} - S_i), with y(T, ., .) = g";
    const PayoffMeasure& m = dec.measure();
    auto replicable_atom = [](const Atom& a) {
        return a.point.z1 == 0.0 && (a.point.z2 == 0.0 || a.point.z2 == 1.0);
    };
    const bool atoms_in_span = std::all_of(m.atoms().begin(), m.atoms().end(), replicable_atom);
    r.discrete_exact = atoms_in_span && m.lines().empty();
    bool on_traded_only = std::all_of(m.atoms().begin(), m.atoms().end(), [](const Atom& a) { return a.point.z1 == 0.0; });
    for (const ContourLine& l : m.lines()) {
        on_traded_only = on_traded_only && l.axis == Axis::s && l.fixed_exponent == 0.0;
    }
    r.identically_zero = r.discrete_exact || (on_traded_only && !dec.model().has_jumps());
    return r;
}

HedgeTable::HedgeTable(const FSDecomposition& dec, std::vector<double> times, Options options)
    : dec_(dec), times_(std::move(times)) {
    const AdditiveModel& model = dec.model();
    const PayoffMeasure& measure = dec.measure();
    if (options.points < 8 || !(options.radius_stddevs > 0.0)) {
        throw DomainError("hedge table: need at least 8 points and a positive radius");
    }
    for (double t : times_) {
        if (!(t >= 0.0) || !(t < model.horizon())) {
            throw DomainError("hedge table: times must lie in [0, T)");
        }
    }
    // Log-coordinate spread of each axis over the whole horizon.
    std::array<double, 2> centre{std::log(model.x0()), std::log(model.s0())};
    std::array<double, 2> radius{0.0, 0.0};
    for (int a = 0; a < 2; ++a) {
        const ComplexPair e = a == 0 ? ComplexPair{1.0, 0.0} : ComplexPair{0.0, 1.0};
        double var = 0.0;
        for (std::size_t k = 0; k < model.segments().size(); ++k) {
            const LevyParams& p = model.segments()[k].params;
            const double dv = a == 0 ? p.covariance.xx + p.jump_intensity * (p.jump_mean[0] * p.jump_mean[0] + p.jump_cov.xx)
                                     : p.covariance.ss + p.jump_intensity * (p.jump_mean[1] * p.jump_mean[1] + p.jump_cov.ss);
            var += model.overlap(k, 0.0, model.horizon()) * dv;
        }
        radius[a] = options.radius_stddevs * std::sqrt(var) + std::abs(model.kappa(model.horizon(), e).real()) + 0.05;
    }
    const int n = options.points;
    const double tol = dec.options().quadrature.rel_tol;
    for (double t : times_) {
        const std::size_t seg = model.segment_at(t);
        std::vector<AtomSlice> atom_row;
        for (const Atom& a : measure.atoms()) {
            const FrequencyRates r = model.rates(a.point);
            atom_row.push_back({model.lambda(t, r), r.gamma[seg]});
        }
        atoms_.push_back(std::move(atom_row));
        std::vector<Slice> row;
        for (std::size_t li = 0; li < measure.lines().size(); ++li) {
            const ContourLine& line = measure.lines()[li];
            const int a = line.axis == Axis::x ? 0 : 1;
            Slice sl;
            sl.lo = centre[a] - radius[a];
            sl.step = 2.0 * radius[a] / (n - 1);
            std::vector<cplx> prev_y, prev_z;
            bool converged = false;
            double worst = 0.0;
            for (int panels : dec.panel_schedule(li, t)) {
                const auto lv = dec.contour_level(li, t, panels);
                std::vector<double> fy(2 * n, 0.0), fz(2 * n, 0.0);
                double l1y = 0.0, l1z = 0.0;
                for (const ContourNode& node : lv->nodes) {
                    const cplx zz = a == 0 ? node.z.z1 : node.z.z2;
                    const cplx cy = node.kw * model.lambda(t, node.rates);
                    const cplx cz = cy * node.rates.gamma[seg];
                    l1y += std::abs(cy);
                    l1z += std::abs(cz);
                    cplx e = std::exp(zz * sl.lo);
                    const cplx ratio = std::exp(zz * sl.step);
                    double er = e.real(), ei = e.imag();
                    const double rr = ratio.real(), ri = ratio.imag();
                    const double yr = cy.real(), yi = cy.imag(), zr = cz.real(), zi = cz.imag();
                    for (int m = 0; m < n; ++m) {
                        fy[2 * m] += yr * er - yi * ei;
                        fy[2 * m + 1] += yr * ei + yi * er;
                        fz[2 * m] += zr * er - zi * ei;
                        fz[2 * m + 1] += zr * ei + zi * er;
                        const double nr = er * rr - ei * ri;
                        ei = er * ri + ei * rr;
                        er = nr;
                    }
                }
                std::vector<cplx> cy(n), cz(n);
                for (int m = 0; m < n; ++m) {
                    cy[m] = {fy[2 * m], fy[2 * m + 1]};
                    cz[m] = {fz[2 * m], fz[2 * m + 1]};
                }
                if (!prev_y.empty()) {
                    bool ok = true;
                    worst = 0.0;
                    for (int m = 0; m < n; ++m) {
                        const double grow = std::exp(line.abscissa * (sl.lo + m * sl.step));
                        const double dy = std::abs(cy[m] - prev_y[m]);
                        const double dz = std::abs(cz[m] - prev_z[m]);
                        worst = std::max({worst, dy, dz});
                        ok = ok && quad::stable(dy, std::abs(cy[m]), grow * l1y, tol) &&
                             quad::stable(dz, std::abs(cz[m]), grow * l1z, tol);
                    }
                    if (ok) {
                        converged = true;
                        prev_y = std::move(cy);
                        prev_z = std::move(cz);
                        break;
                    }
                }
                prev_y = std::move(cy);
                prev_z = std::move(cz);
            }
            if (!converged) {
                throw ConvergenceError("hedge table: line quadrature did not stabilize at t = " + std::to_string(t),
                                       worst);
            }
            sl.fy = std::move(prev_y);
            sl.fz = std::move(prev_z);
            row.push_back(std::move(sl));
        }
        slices_.push_back(std::move(row));
    }
}

cplx HedgeTable::lookup(std::size_t ti, double x, double s, bool hedge) const {
    const double t = times_.at(ti);
    const PayoffMeasure& measure = dec_.measure();
    cplx out{};
    for (std::size_t i = 0; i < measure.atoms().size(); ++i) {
        const Atom& a = measure.atoms()[i];
        const AtomSlice& as = atoms_[ti][i];
        if (hedge) {
            if (as.gamma != 0.0) {
                out += a.weight * power(x, s, {a.point.z1, a.point.z2 - 1.0}) * as.lambda * as.gamma;
            }
        } else {
            out += a.weight * power(x, s, a.point) * as.lambda;
        }
    }
    const double lx = std::log(x);
    const double ls = std::log(s);
    for (std::size_t li = 0; li < measure.lines().size(); ++li) {
        const ContourLine& line = measure.lines()[li];
        const Slice& sl = slices_[ti][li];
        const double xi = line.axis == Axis::x ? lx : ls;
        const double pos = (xi - sl.lo) / sl.step;
        const auto j = static_cast<long>(std::floor(pos));
        const auto& f = hedge ? sl.fz : sl.fy;
        if (j < 1 || j + 2 >= static_cast<long>(f.size())) {
            fallbacks_.fetch_add(1, std::memory_order_relaxed);
            const FSValue v = dec_.value(t, x, s);
            // Pointwise fallback covers every component at once.
            return hedge ? v.z : v.y;
        }
        const double p = pos - j;
        const double w0 = -p * (p - 1.0) * (p - 2.0) / 6.0;
        const double w1 = (p + 1.0) * (p - 1.0) * (p - 2.0) / 2.0;
        const double w2 = -(p + 1.0) * p * (p - 2.0) / 2.0;
        const double w3 = (p + 1.0) * p * (p - 1.0) / 6.0;
        const cplx raw = w0 * f[j - 1] + w1 * f[j] + w2 * f[j + 1] + w3 * f[j + 2];
        const double other = line.axis == Axis::x ? ls : lx;
        cplx c = finish_line(line, raw) * std::exp(line.fixed_exponent * other);
        if (hedge) {
            c /= s;
        }
        out += c;
    }
    return out;
}

cplx HedgeTable::y(std::size_t time_index, double x, double s) const { return lookup(time_index, x, s, false); }
cplx HedgeTable::z(std::size_t time_index, double x, double s) const { return lookup(time_index, x, s, true); }

}  // namespace qhedge
