#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "qhedge/additive_models.hpp"
#include "qhedge/fs_engine.hpp"
#include "json.hpp"

namespace qhedge {

/// Paths of one block, row-major: path p, time index i at [p * (steps + 1) + i].
struct PathBlock {
    std::size_t first_path = 0;
    std::size_t paths = 0;
    std::size_t steps = 0;
    std::vector<double> x;
    std::vector<double> s;

    [[nodiscard]] double x_at(std::size_t p, std::size_t i) const { return x[p * (steps + 1) + i]; }
    [[nodiscard]] double s_at(std::size_t p, std::size_t i) const { return s[p * (steps + 1) + i]; }
};

/// Simulated (X, S) on a uniform rebalancing grid. Paths are produced block by
/// block from independent streams, so an ensemble of any size is reproducible
/// from its seed without holding every path in memory.
class PathEnsemble {
public:
    PathEnsemble(AdditiveModel model, std::size_t n_paths, std::size_t n_steps, std::uint64_t seed,
                 std::size_t block_size = 1000);

    [[nodiscard]] const AdditiveModel& model() const noexcept { return model_; }
    [[nodiscard]] const std::vector<double>& times() const noexcept { return times_; }
    [[nodiscard]] std::size_t n_paths() const noexcept { return n_paths_; }
    [[nodiscard]] std::size_t n_steps() const noexcept { return n_steps_; }
    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] const std::string& model_digest() const noexcept { return model_.digest(); }
    [[nodiscard]] std::size_t blocks() const noexcept { return (n_paths_ + block_size_ - 1) / block_size_; }

    /// Regenerates block b.
    [[nodiscard]] PathBlock block(std::size_t b) const;
    /// All paths at once (n_paths x (n_steps + 1) each); for small ensembles.
    [[nodiscard]] PathBlock materialize() const;

private:
    AdditiveModel model_;
    std::size_t n_paths_;
    std::size_t n_steps_;
    std::uint64_t seed_;
    std::size_t block_size_;
    std::vector<double> times_;
};

PathEnsemble simulate(const AdditiveModel& model, std::size_t n_paths, std::size_t n_steps, std::uint64_t seed);

/// Runs fn(block) over every block on `threads` workers and folds the results
/// in block order, so the outcome does not depend on the thread count.
template <class Acc, class Fn, class Fold>
Acc reduce_blocks(const PathEnsemble& ens, int threads, Fn&& fn, Fold&& fold) {
    const std::size_t nb = ens.blocks();
    std::vector<Acc> parts(nb);
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads > 0 ? threads : 1, nb));
    std::vector<std::exception_ptr> errors(workers);
    auto work = [&](std::size_t w) {
        try {
            for (std::size_t b = w; b < nb; b += workers) {
                parts[b] = fn(ens.block(b));
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
        for (auto& t : pool) {
            t.join();
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    Acc total{};
    for (const Acc& p : parts) {
        fold(total, p);
    }
    return total;
}

struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
};

/// Sample mean, variance and their standard errors from power sums.
struct Moments {
    double n = 0.0;
    double s1 = 0.0;
    double s2 = 0.0;
    double s3 = 0.0;
    double s4 = 0.0;

    void add(double v);
    void merge(const Moments& o);
    [[nodiscard]] Estimate mean() const;
    [[nodiscard]] Estimate variance() const;
};

/// Pooled sample correlation of two series.
struct CoMoments {
    double n = 0.0;
    double sx = 0.0;
    double sy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    double sxy = 0.0;

    void add(double a, double b);
    void merge(const CoMoments& o);
    /// Correlation with standard error sqrt((1 - r^2) / (n - 2)).
    [[nodiscard]] Estimate correlation() const;
};

struct MartingaleStat {
    ComplexPair z;
    double t_mean_re = 0.0;  ///< t-statistic of the per-path mean of M_T - M_0
    double t_mean_im = 0.0;
    double t_cov_re = 0.0;  ///< t-statistic of sum_i dM_i log(S_i / S_0)
    double t_cov_im = 0.0;

    [[nodiscard]] double max_abs() const;
};

/// Discrete M^lambda increments
///   dM_i = X_{i+1}^z lambda_{i+1} - X_i^z lambda_i - X_i^z [(lambda_{i+1} - lambda_i) + lambda_i (kappa_{i+1} - kappa_i)](z)
/// with lambda(t, z) from the model; t-statistics of their means.
MartingaleStat martingale_test(const PathEnsemble& ens, const ComplexPair& z, int threads = 1);
/// Several frequencies in one pass over the paths.
std::vector<MartingaleStat> martingale_tests(const PathEnsemble& ens, const std::vector<ComplexPair>& zs,
                                             int threads = 1);

struct NormalizationStat {
    ComplexPair z;
    Estimate re;
    Estimate im;
};

/// Mean of (X_T/X_0)^{z1} (S_T/S_0)^{z2} exp(-kappa_T(z)); should be 1.
NormalizationStat normalization_test(const PathEnsemble& ens, const ComplexPair& z, int threads = 1);
std::vector<NormalizationStat> normalization_tests(const PathEnsemble& ens, const std::vector<ComplexPair>& zs,
                                                   int threads = 1);

struct BaselineResult {
    std::string name;
    Estimate variance;
    bool dominated = false;  ///< F-S variance <= this variance - 2 pooled standard errors
};

struct SimReport {
    std::uint64_t seed = 0;
    std::size_t n_paths = 0;
    std::size_t n_steps = 0;
    std::string model_digest;
    std::string measure_digest;
    double h0 = 0.0;
    Estimate residual_mean;
    Estimate residual_variance;
    Estimate orthogonality_corr;
    double max_abs_residual = 0.0;
    std::vector<MartingaleStat> martingale_tests;
    std::vector<NormalizationStat> normalization_tests;
    std::vector<BaselineResult> comparison;
    std::vector<double> residuals;  ///< per-path O_T when requested

    [[nodiscard]] nlohmann::json to_json() const;
    /// "path,residual" rows; empty body unless residuals were kept.
    [[nodiscard]] std::string residuals_csv() const;
};

struct HedgeRunOptions {
    int threads = 1;
    bool keep_residuals = false;
    HedgeTable::Options table{};
};

/// P&L = h0 + sum_i z(t_i, X_i, S_i) (S_{i+1} - S_i), O_T = g(X_T, S_T) - P&L,
/// dO_i = y_{i+1} - y_i - z_i dS_i correlated with dS_i - S_i (exp(kappa_{i+1}(0,1) - kappa_i(0,1)) - 1).
SimReport hedge_run(const PathEnsemble& ens, const FSDecomposition& dec, const HedgeRunOptions& opt = {});

enum class Baseline { no_hedge, naive_delta };

struct BaselineTable {
    Estimate fs_variance;
    std::vector<BaselineResult> baselines;
};

/// Residual variance of the F-S hedge and of each baseline on the same paths.
/// The naive delta hedges the claim on X with the F-S hedge of the claim
/// g(s, s) obtained by pretending X == S, evaluated at s = X_t.
BaselineTable baseline_comparison(const PathEnsemble& ens, const FSDecomposition& dec,
                                  const std::vector<Baseline>& baselines, const HedgeRunOptions& opt = {});

const char* baseline_name(Baseline b);

struct TradeoffCheck {
    double analytic = 0.0;
    Estimate empirical;
    double relative_gap = 0.0;
};

/// Realized sum_i (psi(0,1) / rho_bar)^2 (dM^S_i / S_i)^2, per path, against the analytic K_T.
TradeoffCheck tradeoff_check(const PathEnsemble& ens, int threads = 1);

}  // namespace qhedge
