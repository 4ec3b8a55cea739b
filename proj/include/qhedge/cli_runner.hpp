#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qhedge/additive_models.hpp"
#include "qhedge/diffusion_pde.hpp"
#include "qhedge/fs_engine.hpp"
#include "qhedge/mc_validation.hpp"

namespace qhedge {

enum class Route { fourier, pde, both };

struct ValidationConfig {
    std::size_t n_paths = 100000;
    std::size_t n_steps = 250;
    std::uint64_t seed = 2024;
    /// Subset of check_names(); empty selects every check that applies.
    std::vector<std::string> tests;
    std::vector<ComplexPair> frequencies{{0.0, 1.0}, {1.0, 0.0}, {0.5, 0.5}};
    std::vector<Baseline> baselines{Baseline::no_hedge, Baseline::naive_delta};
    std::size_t mc_paths = 100000;  ///< paths of the probabilistic representation in route comparisons
    int table_points = 4001;
};

/// Defaults match the acceptance suite.
struct Tolerances {
    double route_gap = 1e-2;      ///< relative to max(1, |y|), or 3 standard errors of the MC value
    double surface_gap = 2e-2;    ///< relative to max(1, |value|) on interior lattice points
    double stderr_multiple = 3.0;
    double t_stat = 3.0;
    double orthogonality = 0.02;
    double tradeoff = 0.10;
    double replication = 1e-9;
};

struct SurfaceConfig {
    std::vector<double> t;
    std::vector<double> x;
    std::vector<double> s;
};

struct PayoffSpec {
    std::string type;  ///< call, put, power, constant or stock
    Axis axis = Axis::s;
    double strike = 0.0;
    double abscissa = 0.0;
    ComplexPair z{};
    cplx weight = 1.0;
};

struct ExperimentConfig {
    explicit ExperimentConfig(AdditiveModel m) : model(std::move(m)) {}

    AdditiveModel model;
    PayoffSpec payoff;
    PayoffMeasure measure;
    Route route = Route::fourier;
    FSOptions fourier;
    GridConfig pde;
    ValidationConfig validation;
    Tolerances tolerances;
    SurfaceConfig surface;
    std::vector<std::array<double, 3>> compare_points;  ///< (t, x, s)
    std::filesystem::path output = "out";
    int threads = 1;
};

/// Parses a YAML experiment config; `origin` names the source in diagnostics.
/// Throws ConfigError (with the key path and line) or AssumptionError.
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "config");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Names accepted in validation.tests.
const std::vector<std::string>& check_names();

/// Real payoff function g(x, s) of the configured claim.
Payoff payoff_function(const PayoffSpec& spec);

struct RouteRow {
    double t = 0.0;
    double x = 0.0;
    double s = 0.0;
    double y_fourier = 0.0;
    double y_pde = 0.0;
    double y_mc = 0.0;
    double mc_stderr = 0.0;
    double max_gap = 0.0;  ///< largest pairwise |difference|
    bool passed = false;
};

/// Fourier, PDE and Monte Carlo prices on the configured comparison points.
/// Requires a jump-free model.
std::vector<RouteRow> compare_routes(const ExperimentConfig& cfg);

enum class Command { run, price, hedge_surface, simulate, pde, compare, check };

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// File contents keyed by name; nothing touches the disk.
struct Artifacts {
    std::map<std::string, std::string> files;
    std::vector<CheckResult> checks;
    int exit_code = 0;
};

Artifacts execute(const ExperimentConfig& cfg, Command command);

/// Writes every artifact into `dir`, each through a temporary file and a rename.
void write_artifacts(const Artifacts& artifacts, const std::filesystem::path& dir);

/// Command-line entry: subcommand plus --config, --out, --seed, --threads.
/// Exit codes: 0 success, 1 runtime error, 2 config error, 3 assumption
/// violation, 4 failed checks.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace qhedge
