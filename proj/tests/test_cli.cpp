#include "doctest.h"
#include "helpers.hpp"

#include "mfscm/cli.hpp"
#include "mfscm/simlab.hpp"

#include "json.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

using namespace mfscm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run_cli(std::initializer_list<std::string> args) {
    std::vector<std::string> store{"mfscm"};
    store.insert(store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : store) argv.push_back(s.data());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path sample_manifest(const std::string& name, int T0 = 60, int T1 = 12) {
    DgpConfig d;
    d.J = 9;
    d.seed = 3;
    const SimPanel sp = gen_panel(d, draw_oracle(d), T0, T1, 1);
    const fs::path dir = testutil::scratch_dir(name);
    write_panel(sp.panel, dir / "panel", sim_estimation(d, Variant::MfScm));
    return dir;
}

}  // namespace

TEST_CASE("fit writes results and exits 0") {
    const fs::path dir = sample_manifest("cli_fit");
    const auto r = run_cli({"fit", "--manifest", (dir / "panel/manifest.json").string(), "--out",
                            (dir / "results").string()});
    CHECK(r.code == 0);
    CHECK(fs::exists(dir / "results/fit.json"));
    CHECK(fs::exists(dir / "results/effects.csv"));
    const auto j = nlohmann::json::parse(slurp(dir / "results/fit.json"));
    CHECK(j.at("schema_version") == 1);
    CHECK(j.at("weights").size() == 9);
    CHECK(r.out.find("pre_mse") != std::string::npos);
    CHECK(r.out.find("ATE") != std::string::npos);
    const std::string csv = slurp(dir / "results/effects.csv");
    CHECK(csv.rfind("t,effect\n", 0) == 0);
}

TEST_CASE("infer validates level before anything else") {
    const auto r = run_cli({"infer", "--level", "1.5"});
    CHECK(r.code == 2);
    CHECK(r.err.find("level must lie in (0,1)") != std::string::npos);
}

TEST_CASE("infer writes CI outputs deterministically") {
    const fs::path dir = sample_manifest("cli_infer");
    const std::string m = (dir / "panel/manifest.json").string();
    const auto a = run_cli({"infer", "--manifest", m, "--out", (dir / "a").string(), "--n-boot",
                            "200", "--seed", "9", "--block-rule", "minpow:0.5:10"});
    const auto b = run_cli({"infer", "--manifest", m, "--out", (dir / "b").string(), "--n-boot",
                            "200", "--seed", "9", "--block-rule", "minpow:0.5:10", "--workers",
                            "3"});
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    for (const char* f : {"ci.json", "boot_stats.csv", "fit.json", "effects.csv"})
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    const auto ci = nlohmann::json::parse(slurp(dir / "a/ci.json"));
    CHECK(ci.at("n_boot") == 200);
    CHECK(ci.at("block_length") == 10);
    CHECK(ci.at("ci_lower").get<double>() <= ci.at("ci_upper").get<double>());
}

TEST_CASE("configuration errors exit 2 and leave no outputs") {
    const fs::path dir = sample_manifest("cli_errors");
    const std::string m = (dir / "panel/manifest.json").string();
    auto r = run_cli({"infer", "--manifest", m, "--out", (dir / "x").string(), "--block-rule",
                      "wide:3"});
    CHECK(r.code == 2);
    CHECK(r.err.find("--block-rule") != std::string::npos);
    CHECK(!fs::exists(dir / "x"));

    r = run_cli({"placebo", "--manifest", m, "--out", (dir / "x").string(), "--pseudo-t0", "60"});
    CHECK(r.code == 2);
    CHECK(r.err.find("--pseudo-t0") != std::string::npos);

    r = run_cli({"fit", "--manifest", (dir / "missing.json").string()});
    CHECK(r.code == 2);

    r = run_cli({"fit", "--manifest", m, "--variant", "best"});
    CHECK(r.code == 2);
    CHECK(r.err.find("--variant") != std::string::npos);

    r = run_cli({"fit", "--unknown-flag"});
    CHECK(r.code == 2);

    r = run_cli({"sim-coverage", "--levels", "0.9", "--levels", "1.2", "--reps", "2", "--out",
                 (dir / "sim").string()});
    CHECK(r.code == 2);
    CHECK(!fs::exists(dir / "sim"));
}

TEST_CASE("numerical failures exit 1") {
    // Too few pre-treatment low-frequency observations for per-unit reconstruction.
    const fs::path dir = sample_manifest("cli_numeric", 12, 4);
    const auto r = run_cli({"fit", "--manifest", (dir / "panel/manifest.json").string(), "--out",
                            (dir / "out").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("low-frequency observations") != std::string::npos);
    CHECK(!fs::exists(dir / "out/fit.json"));
}

TEST_CASE("placebo subcommand") {
    const fs::path dir = sample_manifest("cli_placebo");
    const auto r = run_cli({"placebo", "--manifest", (dir / "panel/manifest.json").string(),
                            "--out", (dir / "out").string(), "--pseudo-t0", "45"});
    CHECK(r.code == 0);
    const auto j = nlohmann::json::parse(slurp(dir / "out/placebo_effects.json"));
    CHECK(j.at("pseudo_T0") == 45);
    CHECK(j.at("effects").size() == 15);
}

TEST_CASE("simulation subcommands are byte-reproducible") {
    const fs::path dir = testutil::scratch_dir("cli_sim");
    for (const char* sub : {"a", "b"}) {
        const auto r = run_cli({"sim-coverage", "--T0", "40", "--T1", "20", "--reps", "20",
                                "--n-boot", "100", "--seed", "7", "--out", (dir / sub).string()});
        REQUIRE(r.code == 0);
    }
    CHECK(slurp(dir / "a/coverage.json") == slurp(dir / "b/coverage.json"));
    CHECK(slurp(dir / "a/coverage.csv") == slurp(dir / "b/coverage.csv"));
    CHECK(slurp(dir / "a/coverage.json").find("runtime") == std::string::npos);
    CHECK(slurp(dir / "a/coverage.csv").rfind("T1,T0,coverage_0.9,length_0.9", 0) == 0);

    const auto r = run_cli({"sim-risk", "--T0", "40", "--T0", "80", "--T1", "10", "--S", "3",
                            "--M", "10", "--out", (dir / "risk").string()});
    REQUIRE(r.code == 0);
    const std::string csv = slurp(dir / "risk/risk.csv");
    CHECK(csv.rfind("T0,variant,ratio,se\n", 0) == 0);
    CHECK(csv.find("40,baseline-only,") != std::string::npos);
}

TEST_CASE("help lists flags with defaults") {
    auto r = run_cli({"infer", "--help"});
    CHECK(r.code == 0);
    for (const char* s : {"--manifest", "--out", "--seed", "--level", "--n-boot", "--block-rule",
                          "--variant", "--workers", "[0.9]", "[1000]", "[pow:0.8]"})
        CHECK(r.out.find(s) != std::string::npos);
    r = run_cli({"sim-coverage", "--help"});
    CHECK(r.code == 0);
    for (const char* s : {"--T0", "--T1", "--J", "--reps", "[minpow:0.5:10]", "[20240601]"})
        CHECK(r.out.find(s) != std::string::npos);
    r = run_cli({"placebo", "--help"});
    CHECK(r.out.find("--pseudo-t0") != std::string::npos);
    r = run_cli({"sim-risk", "--help"});
    CHECK(r.out.find("[20 80 320 1280]") != std::string::npos);
}
