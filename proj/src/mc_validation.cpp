#include "qhedge/mc_validation.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include "qhedge/errors.hpp"
#include "qhedge/rng.hpp"

namespace qhedge {

namespace {

struct Chol2 {
    double l11 = 0.0;
    double l21 = 0.0;
    double l22 = 0.0;
};

Chol2 cholesky(const Sym2& m) {
    Chol2 c;
    c.l11 = std::sqrt(std::max(0.0, m.xx));
    c.l21 = c.l11 > 0.0 ? m.xs / c.l11 : 0.0;
    c.l22 = std::sqrt(std::max(0.0, m.ss - c.l21 * c.l21));
    return c;
}

double t_stat(const Estimate& e) { return e.std_error > 0.0 ? e.value / e.std_error : 0.0; }

double terminal_payoff(const PayoffMeasure& m, double x, double s) {
    if (auto v = m.closed_form(x, s)) {
        return v->real();
    }
    return evaluate(m, x, s).real();
}

// exp(kappa_{t_{i+1}}(0,1) - kappa_{t_i}(0,1)) - 1 per step.
std::vector<double> compensators(const PathEnsemble& ens) {
    const auto& t = ens.times();
    std::vector<double> c;
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
        const double d = ens.model().kappa(t[i + 1], {0.0, 1.0}).real() - ens.model().kappa(t[i], {0.0, 1.0}).real();
        c.push_back(std::expm1(d));
    }
    return c;
}

nlohmann::json estimate_json(const Estimate& e) { return {{"value", e.value}, {"stderr", e.std_error}}; }

nlohmann::json pair_json(const ComplexPair& z) {
    return nlohmann::json::array({nlohmann::json::array({z.z1.real(), z.z1.imag()}),
                                  nlohmann::json::array({z.z2.real(), z.z2.imag()})});
}

struct RunAcc {
    Moments residual;
    CoMoments ortho;
    double max_abs = 0.0;
    std::vector<double> per_path;
};

void fold_run(RunAcc& into, const RunAcc& part) {
    into.residual.merge(part.residual);
    into.ortho.merge(part.ortho);
    into.max_abs = std::max(into.max_abs, part.max_abs);
    into.per_path.insert(into.per_path.end(), part.per_path.begin(), part.per_path.end());
}

// Residuals of the strategy zf (and, when yf is given, the increments of O).
template <class ZF, class YF>
RunAcc run_strategy(const PathEnsemble& ens, const PayoffMeasure& measure, double h0, ZF&& zf, YF&& yf,
                    bool with_increments, bool keep, int threads) {
    const std::vector<double> comp = compensators(ens);
    const std::size_t n = ens.n_steps();
    return reduce_blocks<RunAcc>(
        ens, threads,
        [&](const PathBlock& b) {
            RunAcc acc;
            for (std::size_t p = 0; p < b.paths; ++p) {
                double pnl = h0;
                double y_prev = h0;
                const double g = terminal_payoff(measure, b.x_at(p, n), b.s_at(p, n));
                for (std::size_t i = 0; i < n; ++i) {
                    const double xi = b.x_at(p, i), si = b.s_at(p, i);
                    const double ds = b.s_at(p, i + 1) - si;
                    const double z = zf(i, xi, si);
                    pnl += z * ds;
                    if (with_increments) {
                        const double y_next = i + 1 == n ? g : yf(i + 1, b.x_at(p, i + 1), b.s_at(p, i + 1));
                        acc.ortho.add(y_next - y_prev - z * ds, ds - si * comp[i]);
                        y_prev = y_next;
                    }
                }
                const double o = g - pnl;
                acc.residual.add(o);
                acc.max_abs = std::max(acc.max_abs, std::abs(o));
                if (keep) {
                    acc.per_path.push_back(o);
                }
            }
            return acc;
        },
        fold_run);
}

std::vector<double> hedge_times(const PathEnsemble& ens) {
    return {ens.times().begin(), ens.times().end() - 1};
}

}  // namespace

PathEnsemble::PathEnsemble(AdditiveModel model, std::size_t n_paths, std::size_t n_steps, std::uint64_t seed,
                           std::size_t block_size)
    : model_(std::move(model)), n_paths_(n_paths), n_steps_(n_steps), seed_(seed), block_size_(block_size) {
    if (n_paths < 1 || n_steps < 1 || block_size < 1) {
        throw DomainError("simulate: n_paths, n_steps and block size must be at least 1");
    }
    const double T = model_.horizon();
    for (std::size_t i = 0; i <= n_steps; ++i) {
        times_.push_back(i == n_steps ? T : T * static_cast<double>(i) / static_cast<double>(n_steps));
    }
}

PathBlock PathEnsemble::block(std::size_t b) const {
    if (b >= blocks()) {
        throw DomainError("path ensemble: block index out of range");
    }
    PathBlock out;
    out.first_path = b * block_size_;
    out.paths = std::min(block_size_, n_paths_ - out.first_path);
    out.steps = n_steps_;
    const std::size_t width = n_steps_ + 1;
    out.x.resize(out.paths * width);
    out.s.resize(out.paths * width);

    // Per step and segment: (length, drift, Brownian and jump factors).
    struct Piece {
        double len;
        const LevyParams* p;
        Chol2 diff;
        Chol2 jump;
    };
    std::vector<std::vector<Piece>> pieces(n_steps_);
    for (std::size_t i = 0; i < n_steps_; ++i) {
        for (std::size_t k = 0; k < model_.segments().size(); ++k) {
            const double len = model_.overlap(k, times_[i], times_[i + 1]);
            if (len > 0.0) {
                const LevyParams& p = model_.segments()[k].params;
                pieces[i].push_back({len, &p, cholesky(p.covariance), cholesky(p.jump_cov)});
            }
        }
    }

    auto rng = make_stream(seed_, b);
    std::normal_distribution<double> n01;
    const double x0 = model_.x0(), s0 = model_.s0();
    for (std::size_t p = 0; p < out.paths; ++p) {
        double z1 = 0.0, z2 = 0.0;
        out.x[p * width] = x0;
        out.s[p * width] = s0;
        for (std::size_t i = 0; i < n_steps_; ++i) {
            for (const Piece& pc : pieces[i]) {
                const double sq = std::sqrt(pc.len);
                const double e1 = n01(rng), e2 = n01(rng);
                z1 += pc.p->drift[0] * pc.len + sq * pc.diff.l11 * e1;
                z2 += pc.p->drift[1] * pc.len + sq * (pc.diff.l21 * e1 + pc.diff.l22 * e2);
                if (pc.p->jump_intensity > 0.0) {
                    std::poisson_distribution<int> pois(pc.p->jump_intensity * pc.len);
                    const int k = pois(rng);
                    if (k > 0) {
                        const double sk = std::sqrt(static_cast<double>(k));
                        const double f1 = n01(rng), f2 = n01(rng);
                        z1 += k * pc.p->jump_mean[0] + sk * pc.jump.l11 * f1;
                        z2 += k * pc.p->jump_mean[1] + sk * (pc.jump.l21 * f1 + pc.jump.l22 * f2);
                    }
                }
            }
            out.x[p * width + i + 1] = x0 * std::exp(z1);
            out.s[p * width + i + 1] = s0 * std::exp(z2);
        }
    }
    return out;
}

PathBlock PathEnsemble::materialize() const {
    PathBlock all;
    all.steps = n_steps_;
    for (std::size_t b = 0; b < blocks(); ++b) {
        PathBlock part = block(b);
        all.paths += part.paths;
        all.x.insert(all.x.end(), part.x.begin(), part.x.end());
        all.s.insert(all.s.end(), part.s.begin(), part.s.end());
    }
    return all;
}

PathEnsemble simulate(const AdditiveModel& model, std::size_t n_paths, std::size_t n_steps, std::uint64_t seed) {
    return PathEnsemble(model, n_paths, n_steps, seed);
}

void Moments::add(double v) {
    const double v2 = v * v;
    n += 1.0;
    s1 += v;
    s2 += v2;
    s3 += v2 * v;
    s4 += v2 * v2;
}

void Moments::merge(const Moments& o) {
    n += o.n;
    s1 += o.s1;
    s2 += o.s2;
    s3 += o.s3;
    s4 += o.s4;
}

Estimate Moments::mean() const {
    if (n < 2.0) {
        return {n > 0.0 ? s1 / n : 0.0, 0.0};
    }
    const double m = s1 / n;
    const double var = std::max(0.0, (s2 - n * m * m) / (n - 1.0));
    return {m, std::sqrt(var / n)};
}

Estimate Moments::variance() const {
    if (n < 2.0) {
        return {0.0, 0.0};
    }
    const double m = s1 / n;
    const double var = std::max(0.0, s2 / n - m * m);
    // Fourth central moment from the raw sums.
    const double m4 = s4 / n - 4.0 * m * s3 / n + 6.0 * m * m * s2 / n - 3.0 * m * m * m * m;
    return {var * n / (n - 1.0), std::sqrt(std::max(0.0, m4 - var * var) / n)};
}

void CoMoments::add(double a, double b) {
    n += 1.0;
    sx += a;
    sy += b;
    sxx += a * a;
    syy += b * b;
    sxy += a * b;
}

void CoMoments::merge(const CoMoments& o) {
    n += o.n;
    sx += o.sx;
    sy += o.sy;
    sxx += o.sxx;
    syy += o.syy;
    sxy += o.sxy;
}

Estimate CoMoments::correlation() const {
    if (n < 3.0) {
        return {0.0, 0.0};
    }
    const double cov = sxy / n - (sx / n) * (sy / n);
    const double vx = sxx / n - (sx / n) * (sx / n);
    const double vy = syy / n - (sy / n) * (sy / n);
    if (!(vx > 0.0) || !(vy > 0.0)) {
        return {0.0, 0.0};
    }
    const double r = cov / std::sqrt(vx * vy);
    return {r, std::sqrt(std::max(0.0, 1.0 - r * r) / (n - 2.0))};
}

double MartingaleStat::max_abs() const {
    return std::max({std::abs(t_mean_re), std::abs(t_mean_im), std::abs(t_cov_re), std::abs(t_cov_im)});
}

std::vector<MartingaleStat> martingale_tests(const PathEnsemble& ens, const std::vector<ComplexPair>& zs,
                                             int threads) {
    const AdditiveModel& model = ens.model();
    const auto& t = ens.times();
    const std::size_t n = ens.n_steps();
    const std::size_t nz = zs.size();
    // lam[f][i], dkap[f][i] = kappa_{i+1} - kappa_i
    std::vector<std::vector<cplx>> lam(nz, std::vector<cplx>(n + 1)), dkap(nz, std::vector<cplx>(n));
    for (std::size_t f = 0; f < nz; ++f) {
        const FrequencyRates rates = model.rates(zs[f]);
        cplx prev = model.kappa(t[0], zs[f]);
        for (std::size_t i = 0; i <= n; ++i) {
            lam[f][i] = model.lambda(t[i], rates);
            if (i > 0) {
                const cplx k = model.kappa(t[i], zs[f]);
                dkap[f][i - 1] = k - prev;
                prev = k;
            }
        }
    }
    const double lx0 = std::log(model.x0()), ls0 = std::log(model.s0());
    struct Acc {
        std::vector<Moments> mr, mi, cr, ci;
    };
    const Acc acc = reduce_blocks<Acc>(
        ens, threads,
        [&](const PathBlock& b) {
            Acc a{std::vector<Moments>(nz), std::vector<Moments>(nz), std::vector<Moments>(nz),
                  std::vector<Moments>(nz)};
            std::vector<double> lx(n + 1), ls(n + 1);
            for (std::size_t p = 0; p < b.paths; ++p) {
                for (std::size_t i = 0; i <= n; ++i) {
                    lx[i] = std::log(b.x_at(p, i)) - lx0;
                    ls[i] = std::log(b.s_at(p, i)) - ls0;
                }
                for (std::size_t f = 0; f < nz; ++f) {
                    const ComplexPair& z = zs[f];
                    cplx total{}, cov{};
                    cplx pw = std::exp(z.z1 * lx[0] + z.z2 * ls[0]);
                    for (std::size_t i = 0; i < n; ++i) {
                        const cplx pw1 = std::exp(z.z1 * lx[i + 1] + z.z2 * ls[i + 1]);
                        const cplx dm = pw1 * lam[f][i + 1] - pw * lam[f][i] -
                                        pw * ((lam[f][i + 1] - lam[f][i]) + lam[f][i] * dkap[f][i]);
                        total += dm;
                        cov += dm * ls[i];
                        pw = pw1;
                    }
                    a.mr[f].add(total.real());
                    a.mi[f].add(total.imag());
                    a.cr[f].add(cov.real());
                    a.ci[f].add(cov.imag());
                }
            }
            return a;
        },
        [nz](Acc& into, const Acc& part) {
            if (into.mr.empty()) {
                into = part;
                return;
            }
            for (std::size_t f = 0; f < nz; ++f) {
                into.mr[f].merge(part.mr[f]);
                into.mi[f].merge(part.mi[f]);
                into.cr[f].merge(part.cr[f]);
                into.ci[f].merge(part.ci[f]);
            }
        });
    std::vector<MartingaleStat> out;
    for (std::size_t f = 0; f < nz; ++f) {
        out.push_back({zs[f], t_stat(acc.mr[f].mean()), t_stat(acc.mi[f].mean()), t_stat(acc.cr[f].mean()),
                       t_stat(acc.ci[f].mean())});
    }
    return out;
}

MartingaleStat martingale_test(const PathEnsemble& ens, const ComplexPair& z, int threads) {
    return martingale_tests(ens, {z}, threads).front();
}

std::vector<NormalizationStat> normalization_tests(const PathEnsemble& ens, const std::vector<ComplexPair>& zs,
                                                   int threads) {
    const AdditiveModel& model = ens.model();
    const std::size_t n = ens.n_steps();
    const std::size_t nz = zs.size();
    std::vector<cplx> scale;
    for (const ComplexPair& z : zs) {
        scale.push_back(std::exp(-model.kappa(model.horizon(), z)));
    }
    struct Acc {
        std::vector<Moments> re, im;
    };
    const Acc acc = reduce_blocks<Acc>(
        ens, threads,
        [&](const PathBlock& b) {
            Acc a{std::vector<Moments>(nz), std::vector<Moments>(nz)};
            for (std::size_t p = 0; p < b.paths; ++p) {
                const double lx = std::log(b.x_at(p, n) / model.x0());
                const double ls = std::log(b.s_at(p, n) / model.s0());
                for (std::size_t f = 0; f < nz; ++f) {
                    const cplx v = std::exp(zs[f].z1 * lx + zs[f].z2 * ls) * scale[f];
                    a.re[f].add(v.real());
                    a.im[f].add(v.imag());
                }
            }
            return a;
        },
        [nz](Acc& into, const Acc& part) {
            if (into.re.empty()) {
                into = part;
                return;
            }
            for (std::size_t f = 0; f < nz; ++f) {
                into.re[f].merge(part.re[f]);
                into.im[f].merge(part.im[f]);
            }
        });
    std::vector<NormalizationStat> out;
    for (std::size_t f = 0; f < nz; ++f) {
        out.push_back({zs[f], acc.re[f].mean(), acc.im[f].mean()});
    }
    return out;
}

NormalizationStat normalization_test(const PathEnsemble& ens, const ComplexPair& z, int threads) {
    return normalization_tests(ens, {z}, threads).front();
}

nlohmann::json SimReport::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["n_paths"] = n_paths;
    j["n_steps"] = n_steps;
    j["model_digest"] = model_digest;
    j["measure_digest"] = measure_digest;
    j["h0"] = h0;
    j["residual_mean"] = estimate_json(residual_mean);
    j["residual_variance"] = estimate_json(residual_variance);
    j["orthogonality_corr"] = estimate_json(orthogonality_corr);
    j["max_abs_residual"] = max_abs_residual;
    j["martingale_tests"] = nlohmann::json::array();
    for (const MartingaleStat& m : martingale_tests) {
        j["martingale_tests"].push_back({{"z", pair_json(m.z)},
                                         {"t_mean_re", m.t_mean_re},
                                         {"t_mean_im", m.t_mean_im},
                                         {"t_cov_re", m.t_cov_re},
                                         {"t_cov_im", m.t_cov_im}});
    }
    j["normalization_tests"] = nlohmann::json::array();
    for (const NormalizationStat& m : normalization_tests) {
        j["normalization_tests"].push_back(
            {{"z", pair_json(m.z)}, {"mean_re", estimate_json(m.re)}, {"mean_im", estimate_json(m.im)}});
    }
    j["comparison_variance"] = nlohmann::json::array();
    for (const BaselineResult& b : comparison) {
        j["comparison_variance"].push_back(
            {{"strategy", b.name}, {"variance", estimate_json(b.variance)}, {"fs_dominates", b.dominated}});
    }
    return j;
}

std::string SimReport::residuals_csv() const {
    std::string out = "path,residual\n";
    char buf[64];
    for (std::size_t i = 0; i < residuals.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.12g\n", i, residuals[i]);
        out += buf;
    }
    return out;
}

SimReport hedge_run(const PathEnsemble& ens, const FSDecomposition& dec, const HedgeRunOptions& opt) {
    if (ens.model_digest() != dec.model().digest()) {
        throw MismatchError("hedge run: ensemble and decomposition were built from different models");
    }
    const HedgeTable table(dec, hedge_times(ens), opt.table);
    const double h0 = dec.h0();
    const RunAcc acc = run_strategy(
        ens, dec.measure(), h0, [&](std::size_t i, double x, double s) { return table.z(i, x, s).real(); },
        [&](std::size_t i, double x, double s) { return table.y(i, x, s).real(); }, true, opt.keep_residuals,
        opt.threads);
    SimReport r;
    r.seed = ens.seed();
    r.n_paths = ens.n_paths();
    r.n_steps = ens.n_steps();
    r.model_digest = ens.model_digest();
    r.measure_digest = dec.measure().digest();
    r.h0 = h0;
    r.residual_mean = acc.residual.mean();
    r.residual_variance = acc.residual.variance();
    r.orthogonality_corr = acc.ortho.correlation();
    r.max_abs_residual = acc.max_abs;
    r.residuals = acc.per_path;
    return r;
}

const char* baseline_name(Baseline b) { return b == Baseline::no_hedge ? "no-hedge" : "naive-delta"; }

BaselineTable baseline_comparison(const PathEnsemble& ens, const FSDecomposition& dec,
                                  const std::vector<Baseline>& baselines, const HedgeRunOptions& opt) {
    if (ens.model_digest() != dec.model().digest()) {
        throw MismatchError("baseline comparison: ensemble and decomposition were built from different models");
    }
    const auto times = hedge_times(ens);
    const double h0 = dec.h0();
    auto no_y = [](std::size_t, double, double) { return 0.0; };
    BaselineTable out;
    {
        const HedgeTable table(dec, times, opt.table);
        out.fs_variance =
            run_strategy(ens, dec.measure(), h0, [&](std::size_t i, double x, double s) { return table.z(i, x, s).real(); },
                         no_y, false, false, opt.threads)
                .residual.variance();
    }
    for (Baseline b : baselines) {
        Estimate v;
        if (b == Baseline::no_hedge) {
            v = run_strategy(ens, dec.measure(), h0, [](std::size_t, double, double) { return 0.0; }, no_y, false,
                             false, opt.threads)
                    .residual.variance();
        } else {
            const FSDecomposition naive(dec.model(), collapse_onto_traded(dec.measure()), dec.options());
            const HedgeTable table(naive, times, opt.table);
            v = run_strategy(ens, dec.measure(), h0,
                             [&](std::size_t i, double x, double) { return table.z(i, x, x).real(); }, no_y, false,
                             false, opt.threads)
                    .residual.variance();
        }
        const double pooled = std::sqrt(v.std_error * v.std_error + out.fs_variance.std_error * out.fs_variance.std_error);
        out.baselines.push_back({baseline_name(b), v, out.fs_variance.value <= v.value - 2.0 * pooled});
    }
    return out;
}

TradeoffCheck tradeoff_check(const PathEnsemble& ens, int threads) {
    const AdditiveModel& model = ens.model();
    const std::vector<double> comp = compensators(ens);
    const auto& t = ens.times();
    const std::size_t n = ens.n_steps();
    std::vector<double> weight(n);
    for (std::size_t i = 0; i < n; ++i) {
        const LevyParams& p = model.segments()[model.segment_at(t[i])].params;
        const double a = p.psi({0.0, 1.0}).real() / p.variance_rate();
        weight[i] = a * a;
    }
    const Moments m = reduce_blocks<Moments>(
        ens, threads,
        [&](const PathBlock& b) {
            Moments acc;
            for (std::size_t p = 0; p < b.paths; ++p) {
                double k = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double si = b.s_at(p, i);
                    const double dm = (b.s_at(p, i + 1) - si - si * comp[i]) / si;
                    k += weight[i] * dm * dm;
                }
                acc.add(k);
            }
            return acc;
        },
        [](Moments& into, const Moments& part) { into.merge(part); });
    TradeoffCheck out;
    out.analytic = model.tradeoff_at(model.horizon());
    out.empirical = m.mean();
    out.relative_gap = out.analytic > 0.0 ? std::abs(out.empirical.value - out.analytic) / out.analytic
                                          : std::abs(out.empirical.value);
    return out;
}

}  // namespace qhedge
