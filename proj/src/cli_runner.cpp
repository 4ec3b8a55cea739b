#include "qhedge/cli_runner.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "qhedge/errors.hpp"

namespace qhedge {

namespace {

using nlohmann::json;

const char* const kSections[] = {"model", "payoff", "route", "quadrature", "pde", "validation",
                                 "tolerances", "surface", "compare", "output", "threads"};

[[noreturn]] void fail(const std::string& key, const YAML::Node& node, const std::string& message) {
    const YAML::Mark m = node.Mark();
    if (m.line >= 0) {
        throw ConfigError(key, "line " + std::to_string(m.line + 1) + ": " + message);
    }
    throw ConfigError(key, message);
}

/// A mapping in the config with typed accessors; unknown keys are rejected by finish().
class Section {
public:
    Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
        if (node_ && !node_.IsMap()) {
            fail(path_, node_, "expected a mapping");
        }
    }

    [[nodiscard]] bool has(const std::string& key) const { return node_ && node_[key]; }
    [[nodiscard]] std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

    YAML::Node get(const std::string& k) {
        used_.insert(k);
        return node_ ? node_[k] : YAML::Node(YAML::NodeType::Undefined);
    }

    double number(const std::string& k, std::optional<double> fallback = std::nullopt) {
        const YAML::Node n = get(k);
        if (!n) {
            if (fallback) {
                return *fallback;
            }
            fail(key(k), node_, "missing required number");
        }
        return as_number(n, key(k));
    }

    long long integer(const std::string& k, long long fallback, long long lo) {
        const YAML::Node n = get(k);
        if (!n) {
            return fallback;
        }
        long long v = 0;
        try {
            v = n.as<long long>();
        } catch (const YAML::Exception&) {
            fail(key(k), n, "expected an integer");
        }
        if (v < lo) {
            fail(key(k), n, "must be at least " + std::to_string(lo));
        }
        return v;
    }

    std::string text(const std::string& k, std::optional<std::string> fallback = std::nullopt) {
        const YAML::Node n = get(k);
        if (!n) {
            if (fallback) {
                return *fallback;
            }
            fail(key(k), node_, "missing required value");
        }
        if (!n.IsScalar()) {
            fail(key(k), n, "expected a string");
        }
        return n.Scalar();
    }

    bool flag(const std::string& k, bool fallback) {
        const YAML::Node n = get(k);
        if (!n) {
            return fallback;
        }
        try {
            return n.as<bool>();
        } catch (const YAML::Exception&) {
            fail(key(k), n, "expected true or false");
        }
    }

    std::array<double, 2> pair(const std::string& k, std::array<double, 2> fallback) {
        const YAML::Node n = get(k);
        if (!n) {
            return fallback;
        }
        if (!n.IsSequence() || n.size() != 2) {
            fail(key(k), n, "expected a list of two numbers");
        }
        return {as_number(n[0], key(k)), as_number(n[1], key(k))};
    }

    void finish() const {
        if (!node_) {
            return;
        }
        for (const auto& kv : node_) {
            const std::string k = kv.first.Scalar();
            if (!used_.count(k)) {
                fail(key(k), kv.first, "unknown key");
            }
        }
    }

    static double as_number(const YAML::Node& n, const std::string& key) {
        try {
            if (n.IsScalar()) {
                return n.as<double>();
            }
        } catch (const YAML::Exception&) {
        }
        fail(key, n, "expected a number");
    }

    [[nodiscard]] const YAML::Node& node() const { return node_; }

private:
    YAML::Node node_;
    std::string path_;
    std::set<std::string> used_;
};

cplx parse_complex(const YAML::Node& n, const std::string& key) {
    if (n.IsSequence()) {
        if (n.size() != 2) {
            fail(key, n, "complex numbers are written as [re, im]");
        }
        return {Section::as_number(n[0], key), Section::as_number(n[1], key)};
    }
    return Section::as_number(n, key);
}

ComplexPair parse_frequency(const YAML::Node& n, const std::string& key) {
    if (!n.IsSequence() || n.size() != 2) {
        fail(key, n, "expected a frequency [z1, z2]");
    }
    return {parse_complex(n[0], key), parse_complex(n[1], key)};
}

std::vector<double> parse_grid(Section& sec, const std::string& k, std::vector<double> fallback) {
    const YAML::Node n = sec.get(k);
    if (!n) {
        return fallback;
    }
    std::vector<double> out;
    if (n.IsSequence()) {
        for (const auto& v : n) {
            out.push_back(Section::as_number(v, sec.key(k)));
        }
    } else {
        Section g(n, sec.key(k));
        const double from = g.number("from"), to = g.number("to");
        const long long points = g.integer("points", 5, 1);
        g.finish();
        for (long long i = 0; i < points; ++i) {
            out.push_back(points == 1 ? from : from + (to - from) * static_cast<double>(i) / (points - 1));
        }
    }
    if (out.empty()) {
        fail(sec.key(k), n, "grid is empty");
    }
    return out;
}

LevyParams parse_levy(Section& sec) {
    LevyParams p;
    const auto drift = sec.pair("drift", {0.0, 0.0});
    p.drift = {drift[0], drift[1]};
    const double sx = sec.number("sigma_x"), ss = sec.number("sigma_s"), c = sec.number("corr", 0.0);
    p.covariance = Sym2::from_vols(sx, ss, c);
    p.jump_intensity = sec.number("jump_intensity", 0.0);
    if (p.jump_intensity < 0.0) {
        fail(sec.key("jump_intensity"), sec.node(), "must be non-negative");
    }
    const auto jm = sec.pair("jump_mean", {0.0, 0.0});
    p.jump_mean = {jm[0], jm[1]};
    const auto jsd = sec.pair("jump_sd", {0.0, 0.0});
    p.jump_cov = Sym2::from_vols(jsd[0], jsd[1], sec.number("jump_corr", 0.0));
    return p;
}

AdditiveModel parse_model(Section& m) {
    const std::string kind = m.text("kind");
    const double T = m.number("horizon", 1.0), x0 = m.number("x0", 100.0), s0 = m.number("s0", 100.0);
    try {
        if (kind == "hulley_mcwalter") {
            const double mu_u = m.number("mu_u"), mu_s = m.number("mu_s"), r = m.number("r", 0.0);
            const double su = m.number("sigma_u"), ss = m.number("sigma_s"), rho = m.number("rho");
            return AdditiveModel::black_scholes({mu_u - r - 0.5 * su * su, mu_s - r - 0.5 * ss * ss}, su, ss, rho, T,
                                                x0, s0);
        }
        if (kind != "black_scholes" && kind != "merton") {
            fail(m.key("kind"), m.get("kind"), "expected black_scholes, hulley_mcwalter or merton");
        }
        std::vector<Segment> segments;
        if (m.has("segments")) {
            const YAML::Node list = m.get("segments");
            if (!list.IsSequence() || list.size() == 0) {
                fail(m.key("segments"), list, "expected a non-empty list");
            }
            for (std::size_t i = 0; i < list.size(); ++i) {
                Section seg(list[i], m.key("segments[" + std::to_string(i) + "]"));
                const double end = seg.number("end");
                segments.push_back({end, parse_levy(seg)});
                seg.finish();
            }
            if (std::abs(segments.back().end - T) > 1e-12 * T) {
                fail(m.key("segments"), list, "last segment must end at the horizon");
            }
            segments.back().end = T;
        } else {
            segments.push_back({T, parse_levy(m)});
        }
        const bool jumps = std::any_of(segments.begin(), segments.end(),
                                       [](const Segment& s) { return s.params.jump_intensity > 0.0; });
        if (kind == "black_scholes" && jumps) {
            fail(m.key("jump_intensity"), m.node(), "black_scholes models have no jumps");
        }
        return AdditiveModel(kind == "merton" ? ModelKind::merton : ModelKind::black_scholes, std::move(segments),
                             x0, s0);
    } catch (const DomainError& e) {
        fail(m.key(""), m.node(), e.what());
    }
}

PayoffMeasure build_measure(const PayoffSpec& p) {
    const ComplexPair id = p.axis == Axis::s ? ComplexPair{0.0, 1.0} : ComplexPair{1.0, 0.0};
    if (p.type == "call") {
        return call_measure(p.strike, p.abscissa, p.axis) + power_claim(id);
    }
    if (p.type == "put") {
        return put_measure(p.strike, p.abscissa, p.axis);
    }
    if (p.type == "power") {
        return power_claim(p.z, p.weight);
    }
    if (p.type == "constant") {
        return power_claim({0.0, 0.0}, p.weight);
    }
    return power_claim({0.0, 1.0});
}

PayoffSpec parse_payoff(Section& sec) {
    PayoffSpec p;
    p.type = sec.text("type");
    if (p.type != "call" && p.type != "put" && p.type != "power" && p.type != "constant" && p.type != "stock") {
        fail(sec.key("type"), sec.get("type"), "expected call, put, power, constant or stock");
    }
    const std::string axis = sec.text("axis", std::string("s"));
    if (axis != "x" && axis != "s") {
        fail(sec.key("axis"), sec.get("axis"), "expected x or s");
    }
    p.axis = axis == "x" ? Axis::x : Axis::s;
    if (p.type == "call" || p.type == "put") {
        p.strike = sec.number("strike");
        p.abscissa = sec.number("abscissa", p.type == "call" ? 0.5 : 1.5);
    }
    if (p.type == "power") {
        const YAML::Node z = sec.get("z");
        if (!z) {
            fail(sec.key("z"), sec.node(), "missing required frequency");
        }
        p.z = parse_frequency(z, sec.key("z"));
    }
    if (p.type == "power" || p.type == "constant") {
        const YAML::Node w = sec.get("weight");
        p.weight = w ? parse_complex(w, sec.key("weight")) : cplx(1.0);
    }
    return p;
}

std::vector<double> snapshot_times(const ExperimentConfig& cfg) {
    std::vector<double> t;
    const int n = cfg.pde.snapshots;
    for (int k = 0; k < n; ++k) {
        t.push_back(k == n - 1 ? cfg.model.horizon() : cfg.model.horizon() * k / (n - 1));
    }
    return t;
}

std::optional<std::size_t> snapshot_index(const ExperimentConfig& cfg, double t) {
    const auto times = snapshot_times(cfg);
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (std::abs(times[k] - t) <= 1e-12 * cfg.model.horizon()) {
            return k;
        }
    }
    return std::nullopt;
}

bool uses_pde(Route r) { return r != Route::fourier; }

// Everything an invocation computes, each piece at most once.
class Runner {
public:
    explicit Runner(const ExperimentConfig& cfg) : cfg_(cfg) {}

    const FSDecomposition& dec() {
        if (!dec_) {
            dec_ = std::make_unique<FSDecomposition>(cfg_.model, cfg_.measure, cfg_.fourier);
        }
        return *dec_;
    }

    const DiffusionSpec& diffusion() {
        if (!spec_) {
            if (cfg_.model.has_jumps()) {
                throw ConfigError("route", "the PDE route requires a model without jumps");
            }
            spec_ = std::make_unique<DiffusionSpec>(DiffusionSpec::from_model(cfg_.model));
        }
        return *spec_;
    }

    const PdeSolution& pde() {
        if (!pde_) {
            pde_ = std::make_unique<PdeSolution>(solve(diffusion(), payoff_function(cfg_.payoff), cfg_.pde));
        }
        return *pde_;
    }

    const PathEnsemble& ensemble() {
        if (!ens_) {
            ens_ = std::make_unique<PathEnsemble>(cfg_.model, cfg_.validation.n_paths, cfg_.validation.n_steps,
                                                  cfg_.validation.seed);
        }
        return *ens_;
    }

    HedgeRunOptions run_options() const {
        HedgeRunOptions o;
        o.threads = cfg_.threads;
        o.table.points = cfg_.validation.table_points;
        return o;
    }

    const SimReport& sim() {
        if (!sim_) {
            SimReport r = hedge_run(ensemble(), dec(), run_options());
            r.martingale_tests = martingale_tests(ensemble(), cfg_.validation.frequencies, cfg_.threads);
            r.normalization_tests = normalization_tests(ensemble(), cfg_.validation.frequencies, cfg_.threads);
            const BaselineTable b = baseline_comparison(ensemble(), dec(), cfg_.validation.baselines, run_options());
            r.comparison = b.baselines;
            fs_variance_ = b.fs_variance;
            sim_ = std::make_unique<SimReport>(std::move(r));
        }
        return *sim_;
    }

    const Estimate& fs_variance() {
        sim();
        return fs_variance_;
    }

    const TradeoffCheck& tradeoff() {
        if (!tradeoff_) {
            tradeoff_ = tradeoff_check(ensemble(), cfg_.threads);
        }
        return *tradeoff_;
    }

    const std::vector<RouteRow>& routes() {
        if (!routes_) {
            routes_ = compare_with(dec(), pde());
        }
        return *routes_;
    }

    const HedgeSurface& surface() {
        if (!surface_) {
            surface_ = hedge_surface(dec(), cfg_.surface.t, cfg_.surface.x, cfg_.surface.s, cfg_.threads);
        }
        return *surface_;
    }

    std::vector<RouteRow> compare_with(const FSDecomposition& d, const PdeSolution& sol) {
        std::vector<RouteRow> rows;
        const Payoff g = payoff_function(cfg_.payoff);
        const auto& tol = cfg_.tolerances;
        for (std::size_t i = 0; i < cfg_.compare_points.size(); ++i) {
            const auto& [t, x, s] = cfg_.compare_points[i];
            const auto snap = snapshot_index(cfg_, t);
            if (!snap) {
                throw ConfigError("compare.points", "comparison times must be PDE snapshot times");
            }
            RouteRow row{t, x, s};
            row.y_fourier = d.y(t, x, s).real();
            row.y_pde = sol.y_at(*snap, x, s);
            const McEstimate mc = monte_carlo_representation(diffusion(), t, x, s, g,
                                                             static_cast<int>(cfg_.validation.mc_paths),
                                                             cfg_.validation.seed + i);
            row.y_mc = mc.value;
            row.mc_stderr = mc.std_error;
            const double fp = std::abs(row.y_fourier - row.y_pde);
            const double fm = std::abs(row.y_fourier - row.y_mc);
            const double pm = std::abs(row.y_pde - row.y_mc);
            row.max_gap = std::max({fp, fm, pm});
            const double band = tol.route_gap * std::max(1.0, std::abs(row.y_fourier));
            const double mc_band = std::max(band, tol.stderr_multiple * mc.std_error);
            row.passed = fp <= band && fm <= mc_band && pm <= mc_band;
            rows.push_back(row);
        }
        return rows;
    }

private:
    const ExperimentConfig& cfg_;
    std::unique_ptr<FSDecomposition> dec_;
    std::unique_ptr<DiffusionSpec> spec_;
    std::unique_ptr<PdeSolution> pde_;
    std::unique_ptr<PathEnsemble> ens_;
    std::unique_ptr<SimReport> sim_;
    Estimate fs_variance_;
    std::optional<TradeoffCheck> tradeoff_;
    std::optional<std::vector<RouteRow>> routes_;
    std::optional<HedgeSurface> surface_;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[200];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

CheckResult run_check(const std::string& name, const ExperimentConfig& cfg, Runner& r) {
    const Tolerances& tol = cfg.tolerances;
    CheckResult c;
    c.name = name;
    if (name == "replication") {
        if (!residual_process_spec(r.dec()).discrete_exact) {
            c.passed = true;
            c.detail = "not applicable: claim is not in the span of 1 and S_T";
            return c;
        }
        const double m = r.sim().max_abs_residual;
        c.passed = m <= tol.replication;
        c.detail = fmt("max |O_T| = %.3g (tolerance %.3g)", m, tol.replication);
    } else if (name == "residual_mean") {
        const Estimate e = r.sim().residual_mean;
        c.passed = std::abs(e.value) <= tol.stderr_multiple * e.std_error + tol.replication;
        c.detail = fmt("mean %.6g, stderr %.3g", e.value, e.std_error);
    } else if (name == "orthogonality") {
        const Estimate e = r.sim().orthogonality_corr;
        c.passed = std::abs(e.value) < tol.orthogonality;
        c.detail = fmt("corr %.6g, stderr %.3g, bound %.3g", e.value, e.std_error, tol.orthogonality);
    } else if (name == "martingale") {
        double worst = 0.0;
        for (const MartingaleStat& m : r.sim().martingale_tests) {
            worst = std::max(worst, m.max_abs());
        }
        c.passed = worst < tol.t_stat;
        c.detail = fmt("largest |t| %.3f over %.0f frequencies", worst,
                       static_cast<double>(r.sim().martingale_tests.size()));
    } else if (name == "normalization") {
        double worst = 0.0;
        for (const NormalizationStat& n : r.sim().normalization_tests) {
            const double tr = n.re.std_error > 0.0 ? std::abs(n.re.value - 1.0) / n.re.std_error : 0.0;
            const double ti = n.im.std_error > 0.0 ? std::abs(n.im.value) / n.im.std_error : 0.0;
            worst = std::max({worst, tr, ti});
        }
        c.passed = worst <= tol.stderr_multiple;
        c.detail = fmt("largest deviation from 1: %.3f standard errors", worst);
    } else if (name == "baselines") {
        c.passed = true;
        c.detail = fmt("F-S variance %.6g", r.fs_variance().value);
        for (const BaselineResult& b : r.sim().comparison) {
            c.passed = c.passed && b.dominated;
            c.detail += "; " + b.name + fmt(" %.6g", b.variance.value) + (b.dominated ? "" : " (not dominated)");
        }
    } else if (name == "tradeoff") {
        const TradeoffCheck& t = r.tradeoff();
        c.passed = t.relative_gap <= tol.tradeoff;
        c.detail = fmt("analytic %.6g, realized %.6g, relative gap %.3g", t.analytic, t.empirical.value,
                       t.relative_gap);
    } else if (name == "routes") {
        c.passed = true;
        double worst = 0.0;
        for (const RouteRow& row : r.routes()) {
            c.passed = c.passed && row.passed;
            worst = std::max(worst, row.max_gap);
        }
        c.detail = fmt("largest pairwise gap %.3g over %.0f points", worst, static_cast<double>(r.routes().size()));
    } else if (name == "surfaces") {
        const HedgeSurface& f = r.surface();
        const PdeSolution& p = r.pde();
        double gy = 0.0, gz = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < f.t.size(); ++i) {
            const std::size_t snap = *snapshot_index(cfg, f.t[i]);
            for (std::size_t j = 0; j < f.x.size(); ++j) {
                for (std::size_t k = 0; k < f.s.size(); ++k) {
                    if (!p.interior(f.x[j], f.s[k])) {
                        continue;
                    }
                    const double yf = f.y[f.index(i, j, k)].real(), zf = f.z[f.index(i, j, k)].real();
                    gy = std::max(gy, std::abs(yf - p.y_at(snap, f.x[j], f.s[k])) / std::max(1.0, std::abs(yf)));
                    gz = std::max(gz, std::abs(zf - p.z_at(snap, f.x[j], f.s[k])) / std::max(1.0, std::abs(zf)));
                    ++count;
                }
            }
        }
        c.passed = count > 0 && gy <= tol.surface_gap && gz <= tol.surface_gap;
        c.detail = fmt("relative gap y %.3g, z %.3g", gy, gz) + " over " + std::to_string(count) + " interior points";
    }
    return c;
}

std::vector<std::string> active_checks(const ExperimentConfig& cfg) {
    if (!cfg.validation.tests.empty()) {
        return cfg.validation.tests;
    }
    std::vector<std::string> out;
    for (const std::string& n : check_names()) {
        if ((n == "routes" || n == "surfaces") && cfg.route != Route::both) {
            continue;
        }
        out.push_back(n);
    }
    return out;
}

json estimate_json(const Estimate& e) { return {{"value", e.value}, {"stderr", e.std_error}}; }

const char* route_name(Route r) { return r == Route::fourier ? "fourier" : r == Route::pde ? "pde" : "both"; }

std::string surface_csv_from_pde(const ExperimentConfig& cfg, const PdeSolution& p) {
    std::string out = "t,x,s,y,z\n";
    char buf[160];
    for (double t : cfg.surface.t) {
        const auto idx = snapshot_index(cfg, t);
        if (!idx) {
            throw ConfigError("surface.t", "times must be PDE snapshot times");
        }
        const std::size_t snap = *idx;
        for (double x : cfg.surface.x) {
            for (double s : cfg.surface.s) {
                std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.12g,%.12g\n", t, x, s, p.y_at(snap, x, s),
                              p.z_at(snap, x, s));
                out += buf;
            }
        }
    }
    return out;
}

std::string assumption_text(const AssumptionError& e) {
    static const char* const items[] = {
        "",
        "structure condition: the reference variance rho^S must be strictly increasing",
        "the payoff measure must have bounded real support",
        "payoff frequencies must lie in the moment domain of the model",
        "cumulant densities must be bounded",
    };
    const int i = e.item();
    std::string out = "assumption violated (item " + std::to_string(i) + ")";
    if (i >= 1 && i <= 4) {
        out += std::string(", ") + items[i];
    }
    return out + ": " + e.what();
}

}  // namespace

const std::vector<std::string>& check_names() {
    static const std::vector<std::string> names{"replication", "residual_mean", "orthogonality", "martingale",
                                                "normalization", "baselines", "tradeoff", "routes", "surfaces"};
    return names;
}

Payoff payoff_function(const PayoffSpec& spec) {
    const bool on_x = spec.axis == Axis::x;
    const double K = spec.strike;
    if (spec.type == "call") {
        return [=](double x, double s) { return std::max((on_x ? x : s) - K, 0.0); };
    }
    if (spec.type == "put") {
        return [=](double x, double s) { return std::max(K - (on_x ? x : s), 0.0); };
    }
    if (spec.type == "power") {
        const ComplexPair z = spec.z;
        const cplx w = spec.weight;
        return [=](double x, double s) { return (w * power(x, s, z)).real(); };
    }
    if (spec.type == "constant") {
        const double w = spec.weight.real();
        return [=](double, double) { return w; };
    }
    return [](double, double s) { return s; };
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError("", origin + ": line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
    }
    if (!root.IsMap()) {
        throw ConfigError("", origin + ": expected a mapping of sections");
    }
    for (const auto& kv : root) {
        const std::string k = kv.first.Scalar();
        if (std::find(std::begin(kSections), std::end(kSections), k) == std::end(kSections)) {
            fail(k, kv.first, "unknown section");
        }
    }
    if (!root["model"]) {
        throw ConfigError("model", "missing section");
    }
    if (!root["payoff"]) {
        throw ConfigError("payoff", "missing section");
    }

    Section model_sec(root["model"], "model");
    ExperimentConfig cfg(parse_model(model_sec));
    model_sec.finish();
    const double T = cfg.model.horizon();

    Section pay(root["payoff"], "payoff");
    cfg.payoff = parse_payoff(pay);
    pay.finish();
    try {
        cfg.measure = build_measure(cfg.payoff);
    } catch (const DomainError& e) {
        fail("payoff", root["payoff"], e.what());
    }

    if (root["route"]) {
        const YAML::Node r = root["route"];
        const std::string v = r.IsScalar() ? r.Scalar() : "";
        if (v == "fourier") {
            cfg.route = Route::fourier;
        } else if (v == "pde") {
            cfg.route = Route::pde;
        } else if (v == "both") {
            cfg.route = Route::both;
        } else {
            fail("route", r, "expected fourier, pde or both");
        }
        if (uses_pde(cfg.route) && cfg.model.has_jumps()) {
            fail("route", r, "route " + v + " requires a diffusion model without jumps");
        }
    }

    Section q(root["quadrature"], "quadrature");
    cfg.fourier.quadrature.rel_tol = q.number("rel_tol", cfg.fourier.quadrature.rel_tol);
    cfg.fourier.quadrature.initial_panels =
        static_cast<int>(q.integer("initial_panels", cfg.fourier.quadrature.initial_panels, 1));
    cfg.fourier.quadrature.max_panels =
        static_cast<int>(q.integer("max_panels", cfg.fourier.quadrature.max_panels, 1));
    cfg.fourier.decay_floor = q.number("decay_floor", cfg.fourier.decay_floor);
    q.finish();

    Section pde(root["pde"], "pde");
    cfg.pde.nx = static_cast<int>(pde.integer("nx", cfg.pde.nx, 7));
    cfg.pde.ns = static_cast<int>(pde.integer("ns", cfg.pde.ns, 7));
    cfg.pde.nt = static_cast<int>(pde.integer("nt", cfg.pde.nt, 0));
    cfg.pde.radius_stddevs = pde.number("radius_stddevs", cfg.pde.radius_stddevs);
    cfg.pde.target_cfl = pde.number("target_cfl", cfg.pde.target_cfl);
    cfg.pde.snapshots = static_cast<int>(pde.integer("snapshots", cfg.pde.snapshots, 2));
    cfg.pde.allow_unproven_regime = pde.flag("allow_unproven_regime", false);
    pde.finish();

    Section val(root["validation"], "validation");
    ValidationConfig& v = cfg.validation;
    v.n_paths = static_cast<std::size_t>(val.integer("n_paths", static_cast<long long>(v.n_paths), 1));
    v.n_steps = static_cast<std::size_t>(val.integer("n_steps", static_cast<long long>(v.n_steps), 1));
    v.seed = static_cast<std::uint64_t>(val.integer("seed", static_cast<long long>(v.seed), 0));
    v.mc_paths = static_cast<std::size_t>(val.integer("mc_paths", static_cast<long long>(v.mc_paths), 2));
    v.table_points = static_cast<int>(val.integer("table_points", v.table_points, 8));
    if (const YAML::Node tests = val.get("tests")) {
        if (!tests.IsSequence()) {
            fail(val.key("tests"), tests, "expected a list of check names");
        }
        for (const auto& t : tests) {
            const std::string name = t.IsScalar() ? t.Scalar() : "";
            if (std::find(check_names().begin(), check_names().end(), name) == check_names().end()) {
                fail(val.key("tests"), t, "unknown check '" + name + "'");
            }
            if ((name == "routes" || name == "surfaces") && cfg.route != Route::both) {
                fail(val.key("tests"), t, "check '" + name + "' needs route: both");
            }
            v.tests.push_back(name);
        }
    }
    if (const YAML::Node fr = val.get("frequencies")) {
        if (!fr.IsSequence() || fr.size() == 0) {
            fail(val.key("frequencies"), fr, "expected a non-empty list of [z1, z2]");
        }
        v.frequencies.clear();
        for (const auto& z : fr) {
            v.frequencies.push_back(parse_frequency(z, val.key("frequencies")));
        }
    }
    if (const YAML::Node bl = val.get("baselines")) {
        if (!bl.IsSequence()) {
            fail(val.key("baselines"), bl, "expected a list");
        }
        v.baselines.clear();
        for (const auto& b : bl) {
            const std::string name = b.IsScalar() ? b.Scalar() : "";
            if (name == "no-hedge") {
                v.baselines.push_back(Baseline::no_hedge);
            } else if (name == "naive-delta") {
                v.baselines.push_back(Baseline::naive_delta);
            } else {
                fail(val.key("baselines"), b, "expected no-hedge or naive-delta");
            }
        }
    }
    val.finish();

    Section tol(root["tolerances"], "tolerances");
    Tolerances& t = cfg.tolerances;
    t.route_gap = tol.number("route_gap", t.route_gap);
    t.surface_gap = tol.number("surface_gap", t.surface_gap);
    t.stderr_multiple = tol.number("stderr_multiple", t.stderr_multiple);
    t.t_stat = tol.number("t_stat", t.t_stat);
    t.orthogonality = tol.number("orthogonality", t.orthogonality);
    t.tradeoff = tol.number("tradeoff", t.tradeoff);
    t.replication = tol.number("replication", t.replication);
    tol.finish();

    const double x0 = cfg.model.x0(), s0 = cfg.model.s0();
    auto spread = [](double c) {
        std::vector<double> g;
        for (int i = 0; i < 9; ++i) {
            g.push_back(c * (0.8 + 0.05 * i));
        }
        return g;
    };
    Section surf(root["surface"], "surface");
    cfg.surface.t = parse_grid(surf, "t", {0.0, 0.5 * T});
    cfg.surface.x = parse_grid(surf, "x", spread(x0));
    cfg.surface.s = parse_grid(surf, "s", spread(s0));
    for (double tv : cfg.surface.t) {
        if (tv < 0.0 || tv > T) {
            fail(surf.key("t"), surf.node(), "times must lie in [0, horizon]");
        }
        if (uses_pde(cfg.route) && !snapshot_index(cfg, tv)) {
            fail(surf.key("t"), surf.node(), "with the PDE route, times must be PDE snapshot times k T / (snapshots - 1)");
        }
    }
    surf.finish();

    Section cmp(root["compare"], "compare");
    if (const YAML::Node pts = cmp.get("points")) {
        if (!pts.IsSequence()) {
            fail(cmp.key("points"), pts, "expected a list of [t, x, s]");
        }
        for (const auto& p : pts) {
            if (!p.IsSequence() || p.size() != 3) {
                fail(cmp.key("points"), p, "expected [t, x, s]");
            }
            cfg.compare_points.push_back({Section::as_number(p[0], cmp.key("points")),
                                          Section::as_number(p[1], cmp.key("points")),
                                          Section::as_number(p[2], cmp.key("points"))});
        }
    } else {
        cfg.compare_points = {{0.0, x0, s0}, {0.0, 0.9 * x0, s0}, {0.0, 1.1 * x0, 0.95 * s0}, {0.5 * T, x0, s0}};
    }
    for (const auto& p : cfg.compare_points) {
        if (uses_pde(cfg.route) && !snapshot_index(cfg, p[0])) {
            fail(cmp.key("points"), cmp.node(), "comparison times must be PDE snapshot times");
        }
        if (!(p[1] > 0.0) || !(p[2] > 0.0)) {
            fail(cmp.key("points"), cmp.node(), "comparison prices must be positive");
        }
    }
    cmp.finish();

    if (const YAML::Node out = root["output"]) {
        if (!out.IsScalar()) {
            fail("output", out, "expected a directory path");
        }
        cfg.output = out.Scalar();
    }
    if (const YAML::Node th = root["threads"]) {
        int n = 0;
        try {
            n = th.as<int>();
        } catch (const YAML::Exception&) {
            fail("threads", th, "expected an integer");
        }
        if (n < 1) {
            fail("threads", th, "must be at least 1");
        }
        cfg.threads = n;
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("", "cannot read config file " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    ExperimentConfig cfg = parse_config(buf.str(), path.string());
    if (cfg.output.is_relative()) {
        cfg.output = path.parent_path() / cfg.output;
    }
    return cfg;
}

std::vector<RouteRow> compare_routes(const ExperimentConfig& cfg) {
    Runner r(cfg);
    return r.routes();
}

Artifacts execute(const ExperimentConfig& cfg, Command command) {
    Runner r(cfg);
    Artifacts a;
    json summary;
    summary["model_digest"] = cfg.model.digest();
    summary["measure_digest"] = cfg.measure.digest();
    summary["route"] = route_name(cfg.route);
    summary["seed"] = cfg.validation.seed;

    const bool all = command == Command::run;
    const bool want_fourier = cfg.route != Route::pde || command == Command::compare;
    const bool want_pde = uses_pde(cfg.route) || command == Command::pde;

    if (all || command == Command::price || command == Command::compare || command == Command::check) {
        if (want_fourier || all) {
            const FSDecomposition& d = r.dec();
            json lines = json::array();
            for (const FSLineReport& l : d.h0_report()) {
                lines.push_back({{"truncation", l.truncation}, {"panels", l.panels}, {"residual", l.residual_y}});
            }
            summary["fourier"] = {{"h0", d.h0()}, {"h0_imag", d.h0_complex().imag()}, {"lines", lines}};
        }
    }
    if ((want_pde && (all || command == Command::price || command == Command::check)) || command == Command::pde ||
        command == Command::compare) {
        const PdeSolution& p = r.pde();
        summary["pde"] = {{"h0", p.h0()}, {"steps", p.steps}, {"dt", p.dt}, {"cfl", p.cfl}, {"warnings", p.warnings}};
        if (command == Command::pde) {
            a.files["pde_surface.csv"] = p.to_csv();
        }
    }
    if (all || command == Command::hedge_surface) {
        a.files["hedge_surface.csv"] =
            cfg.route == Route::pde ? surface_csv_from_pde(cfg, r.pde()) : r.surface().to_csv();
    }
    if (command == Command::compare) {
        json rows = json::array();
        bool ok = true;
        for (const RouteRow& row : r.routes()) {
            rows.push_back({{"t", row.t}, {"x", row.x}, {"s", row.s}, {"y_fourier", row.y_fourier},
                            {"y_pde", row.y_pde}, {"y_mc", row.y_mc}, {"mc_stderr", row.mc_stderr},
                            {"max_gap", row.max_gap}, {"passed", row.passed}});
            ok = ok && row.passed;
        }
        summary["compare"] = rows;
        a.checks.push_back({"routes", ok, ok ? "all routes agree" : "route gaps exceed the tolerance"});
    }
    if (all || command == Command::simulate) {
        SimReport rep = r.sim();
        json j = rep.to_json();
        j["fs_variance"] = estimate_json(r.fs_variance());
        const TradeoffCheck& t = r.tradeoff();
        j["tradeoff"] = {{"analytic", t.analytic}, {"realized", estimate_json(t.empirical)},
                         {"relative_gap", t.relative_gap}};
        a.files["sim_report.json"] = j.dump(2) + "\n";
        summary["simulation"] = {{"h0", rep.h0},
                                 {"residual_mean", estimate_json(rep.residual_mean)},
                                 {"residual_variance", estimate_json(rep.residual_variance)},
                                 {"orthogonality_corr", estimate_json(rep.orthogonality_corr)}};
    }
    if (all || command == Command::check) {
        std::string log;
        for (const std::string& name : active_checks(cfg)) {
            a.checks.push_back(run_check(name, cfg, r));
        }
        for (const CheckResult& c : a.checks) {
            log += std::string(c.passed ? "PASS " : "FAIL ") + c.name + ": " + c.detail + "\n";
        }
        a.files["checks.log"] = log;
        if (cfg.route == Route::both) {
            json rows = json::array();
            for (const RouteRow& row : r.routes()) {
                rows.push_back({{"t", row.t}, {"x", row.x}, {"s", row.s}, {"y_fourier", row.y_fourier},
                                {"y_pde", row.y_pde}, {"y_mc", row.y_mc}, {"mc_stderr", row.mc_stderr},
                                {"max_gap", row.max_gap}, {"passed", row.passed}});
            }
            summary["compare"] = rows;
        }
    }
    json checks = json::array();
    bool ok = true;
    for (const CheckResult& c : a.checks) {
        checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
        ok = ok && c.passed;
    }
    summary["checks"] = checks;
    summary["status"] = ok ? "pass" : "fail";
    a.files["summary.json"] = summary.dump(2) + "\n";
    a.exit_code = ok ? 0 : 4;
    return a;
}

void write_artifacts(const Artifacts& artifacts, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& [name, body] : artifacts.files) {
        const auto tmp = dir / ("." + name + ".tmp");
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << body;
            if (!out) {
                throw Error("cannot write " + tmp.string());
            }
        }
        std::filesystem::rename(tmp, dir / name);
    }
}

namespace {

void check_writable(const std::filesystem::path& dir) {
    std::filesystem::path probe = std::filesystem::absolute(dir);
    if (std::filesystem::exists(probe) && !std::filesystem::is_directory(probe)) {
        throw ConfigError("output", probe.string() + " exists and is not a directory");
    }
    while (!std::filesystem::exists(probe) && probe.has_parent_path() && probe != probe.parent_path()) {
        probe = probe.parent_path();
    }
    if (::access(probe.c_str(), W_OK) != 0) {
        throw ConfigError("output", "directory " + probe.string() + " is not writable");
    }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Quadratic hedging experiments"};
    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    app.add_option("--config", config_path, "experiment config (YAML)")->required();
    app.add_option("--out", out_dir, "output directory (overrides output)");
    app.add_option("--seed", seed, "random seed (overrides validation.seed)");
    app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    app.require_subcommand(0, 1);
    const std::pair<const char*, Command> commands[] = {
        {"run", Command::run},         {"price", Command::price},     {"hedge-surface", Command::hedge_surface},
        {"simulate", Command::simulate}, {"pde", Command::pde},         {"compare", Command::compare},
        {"check", Command::check}};
    const char* const help[] = {"all reports and checks", "initial capital by the selected routes",
                                "y and z on the surface grid", "Monte Carlo hedge run and martingale tests",
                                "finite-difference solution", "Fourier, PDE and Monte Carlo agreement table",
                                "invariant suite"};
    std::vector<CLI::App*> subs;
    for (std::size_t i = 0; i < std::size(commands); ++i) {
        subs.push_back(app.add_subcommand(commands[i].first, help[i])->fallthrough());
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    Command command = Command::run;
    for (std::size_t i = 0; i < subs.size(); ++i) {
        if (subs[i]->parsed()) {
            command = commands[i].second;
        }
    }
    try {
        ExperimentConfig cfg = load_config(config_path);
        if (seed) {
            cfg.validation.seed = *seed;
        }
        if (threads) {
            cfg.threads = *threads;
        }
        if (!out_dir.empty()) {
            cfg.output = out_dir;
        }
        check_writable(cfg.output);
        const Artifacts a = execute(cfg, command);
        write_artifacts(a, cfg.output);
        for (const CheckResult& c : a.checks) {
            out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
        }
        out << "wrote";
        for (const auto& f : a.files) {
            out << " " << f.first;
        }
        out << " to " << cfg.output.string() << "\n";
        return a.exit_code;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const AssumptionError& e) {
        err << assumption_text(e) << "\n";
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace qhedge
