#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "qhedge/cli_runner.hpp"
#include "qhedge/errors.hpp"

using namespace qhedge;
namespace fs = std::filesystem;

namespace {

const std::string kSmallMerton = R"(model:
  kind: merton
  drift: [0.02, 0.04]
  sigma_x: 0.25
  sigma_s: 0.20
  corr: 0.7
  jump_intensity: 0.5
  jump_mean: [-0.05, -0.08]
  jump_sd: [0.10, 0.12]
  jump_corr: 0.5
payoff:
  type: stock
validation:
  n_paths: 2000
  n_steps: 20
  seed: 5
  table_points: 501
surface:
  t: [0.0, 0.5]
  x: [90, 110]
  s: [90, 100, 110]
)";

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("qhedge_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    fs::path write(const std::string& name, const std::string& body) const {
        std::ofstream(path / name) << body;
        return path / name;
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream b;
    b << in.rdbuf();
    return b.str();
}

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult cli(std::vector<std::string> args) {
    args.insert(args.begin(), "qhedge");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string replace(std::string s, const std::string& from, const std::string& to) {
    s.replace(s.find(from), from.size(), to);
    return s;
}

}  // namespace

TEST_CASE("config diagnostics name the key and line") {
    try {
        (void)parse_config(replace(kSmallMerton, "sigma_s: 0.20", "sigma_s: fast"));
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        CHECK(e.key() == "model.sigma_s");
        CHECK(std::string(e.what()).find("line 5") != std::string::npos);
    }
    try {
        (void)parse_config(kSmallMerton + "tolerances:\n  orthogonallity: 0.1\n");
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        CHECK(e.key() == "tolerances.orthogonallity");
    }
    CHECK_THROWS_AS(parse_config("model: [1, 2"), ConfigError);
    CHECK_THROWS_AS(parse_config(kSmallMerton + "route: pde\n"), ConfigError);
    CHECK_THROWS_AS(parse_config(kSmallMerton + "extra: 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config(replace(kSmallMerton, "type: stock", "type: digital")), ConfigError);
    CHECK_THROWS_AS(parse_config(replace(kSmallMerton, "corr: 0.7", "corr: 1.7")), ConfigError);

    const ExperimentConfig cfg = parse_config(kSmallMerton);
    CHECK(cfg.validation.n_paths == 2000);
    CHECK(cfg.model.has_jumps());
    CHECK(cfg.surface.x.size() == 2);
    CHECK(cfg.tolerances.orthogonality == 0.02);
}

TEST_CASE("the claim S_T runs clean with zero residual") {
    TempDir dir;
    const fs::path config = dir.write("stock.yaml", kSmallMerton);
    const CliResult r = cli({"run", "--config", config.string(), "--out", (dir.path / "out").string()});
    CHECK(r.code == 0);
    const auto report = nlohmann::json::parse(slurp(dir.path / "out" / "sim_report.json"));
    CHECK(report["max_abs_residual"].get<double>() < 1e-9);
    for (const char* f : {"summary.json", "hedge_surface.csv", "sim_report.json", "checks.log"}) {
        CHECK(fs::exists(dir.path / "out" / f));
    }
    CHECK(slurp(dir.path / "out" / "checks.log").find("PASS replication") != std::string::npos);
}

TEST_CASE("a degenerate traded asset exits 3 and writes nothing") {
    TempDir dir;
    const std::string body = replace(kSmallMerton, "sigma_s: 0.20", "sigma_s: 0.0");
    const std::string body2 = replace(replace(body, "jump_intensity: 0.5", "jump_intensity: 0.0"), "kind: merton",
                                      "kind: black_scholes");
    const fs::path config = dir.write("bad.yaml", body2);
    const CliResult r = cli({"price", "--config", config.string(), "--out", (dir.path / "out").string()});
    CHECK(r.code == 3);
    CHECK(r.err.find("structure condition") != std::string::npos);
    CHECK_FALSE(fs::exists(dir.path / "out"));
}

TEST_CASE("config errors exit 2 and write nothing") {
    TempDir dir;
    const fs::path config = dir.write("bad.yaml", kSmallMerton + "route: pde\n");
    const CliResult r = cli({"run", "--config", config.string(), "--out", (dir.path / "out").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("route") != std::string::npos);
    CHECK_FALSE(fs::exists(dir.path / "out"));
    CHECK(cli({"run", "--config", (dir.path / "missing.yaml").string()}).code == 2);
    CHECK(cli({"frobnicate", "--config", config.string()}).code == 2);
}

TEST_CASE("reruns with the same seed are byte identical") {
    TempDir dir;
    const std::string body = replace(kSmallMerton, "type: stock", "type: call\n  axis: x\n  strike: 100");
    const fs::path config = dir.write("call.yaml", body);
    const auto a = dir.path / "a", b = dir.path / "b", c = dir.path / "c";
    CHECK(cli({"simulate", "--config", config.string(), "--out", a.string()}).code == 0);
    CHECK(cli({"simulate", "--config", config.string(), "--out", b.string(), "--threads", "2"}).code == 0);
    CHECK(cli({"simulate", "--config", config.string(), "--out", c.string(), "--seed", "6"}).code == 0);
    CHECK(slurp(a / "sim_report.json") == slurp(b / "sim_report.json"));
    CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
    CHECK(slurp(a / "sim_report.json") != slurp(c / "sim_report.json"));
}

TEST_CASE("route comparison on trivial claims") {
    const std::string bs = R"(model:
  kind: hulley_mcwalter
  mu_u: 0.10
  mu_s: 0.08
  r: 0.02
  sigma_u: 0.30
  sigma_s: 0.25
  rho: 0.8
payoff:
  type: constant
route: both
pde:
  nx: 41
  ns: 41
validation:
  mc_paths: 2000
)";
    const ExperimentConfig one = parse_config(bs);
    for (const RouteRow& row : compare_routes(one)) {
        CHECK(row.y_fourier == 1.0);
        CHECK(row.y_pde == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(row.y_mc == 1.0);
        CHECK(row.passed);
    }
    const ExperimentConfig stock = parse_config(replace(bs, "type: constant", "type: stock"));
    const auto rows = compare_routes(stock);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].y_fourier == 100.0);
    CHECK(rows[0].y_pde == doctest::Approx(100.0).epsilon(1e-10));
    for (const RouteRow& row : rows) {
        CHECK(std::abs(row.y_mc - row.s) <= 3.0 * row.mc_stderr);
        CHECK(row.passed);
    }
}

TEST_CASE("the bundled Hulley-McWalter example passes its checks") {
    TempDir dir;
    const fs::path config = fs::path(QHEDGE_SOURCE_DIR) / "configs" / "hulley_mcwalter.yaml";
    const CliResult r = cli({"run", "--config", config.string(), "--out", dir.path.string()});
    CHECK(r.code == 0);
    const auto summary = nlohmann::json::parse(slurp(dir.path / "summary.json"));
    CHECK(summary["status"] == "pass");
    for (const auto& row : summary["compare"]) {
        CHECK(row["passed"].get<bool>());
    }
    const double hf = summary["fourier"]["h0"], hp = summary["pde"]["h0"];
    CHECK(std::abs(hf - hp) < 0.01 * hf);
    CHECK(slurp(dir.path / "hedge_surface.csv").rfind("t,x,s,y,z\n", 0) == 0);
}

TEST_CASE("failed checks exit 4") {
    TempDir dir;
    const std::string body = replace(kSmallMerton, "type: stock", "type: call\n  axis: x\n  strike: 100") +
                             "tolerances:\n  tradeoff: 0.0\n";
    const fs::path config = dir.write("strict.yaml", body);
    const CliResult r = cli({"check", "--config", config.string(), "--out", (dir.path / "o").string()});
    CHECK(r.code == 4);
    CHECK(slurp(dir.path / "o" / "checks.log").find("FAIL tradeoff") != std::string::npos);
}
