#include "mfscm/cli.hpp"

#include "mfscm/error.hpp"
#include "mfscm/estimator.hpp"
#include "mfscm/inference.hpp"
#include "mfscm/panel.hpp"
#include "mfscm/serialize.hpp"
#include "mfscm/simlab.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace mfscm::cli {

namespace {

namespace fs = std::filesystem;

// 0 quiet, 1 summary (default), 2 debug.
int log_level() {
    const char* v = std::getenv("MFSC_LOG");
    if (v == nullptr || *v == '\0') return 1;
    const std::string s(v);
    if (s == "quiet" || s == "0" || s == "error") return 0;
    if (s == "debug" || s == "2" || s == "trace") return 2;
    return 1;
}

struct EstimationFlags {
    std::string variant;
    std::optional<int> lag_order;
    std::optional<int> basis_degree;
    std::optional<double> solver_tol;
    bool pooled_recon = false;
    bool free_midas_sign = false;
};

struct Options {
    std::string manifest;
    std::string out = "results";
    unsigned workers = 1;
    EstimationFlags est;

    // infer
    std::uint64_t seed = 1;
    double level = 0.90;
    int n_boot = 1000;
    std::string block_rule = "pow:0.8";

    // placebo
    int pseudo_t0 = 0;

    // simulations
    std::uint64_t sim_seed = DgpConfig{}.seed;
    std::vector<int> T0;
    std::vector<int> T1;
    int J = 20;
    int reps = 1000;
    int S = 500;
    int M = 1000;
    double effect = 0.0;
    std::string pooling = "auto";
    std::vector<double> levels{0.90, 0.95, 0.99};
};

void add_estimation_flags(CLI::App* sub, EstimationFlags& f) {
    sub->add_option("--variant", f.variant,
                    "Estimator variant {mfscm|no-midas|baseline-only}; default: manifest value");
    sub->add_option("--lag-order", f.lag_order,
                    "Covariate lag order P of the reconstruction model; default: manifest value");
    sub->add_option("--basis-degree", f.basis_degree,
                    "Number L of dictionary functions; default: manifest value");
    sub->add_option("--solver-tol", f.solver_tol, "KKT tolerance; default: manifest value");
    sub->add_flag("--pooled-recon", f.pooled_recon,
                  "One shared reconstruction model per low-frequency class");
    sub->add_flag("--free-midas-sign", f.free_midas_sign,
                  "Drop the per-lag nonnegativity of MIDAS weights");
}

void add_workers(CLI::App* sub, unsigned& workers) {
    sub->add_option("--workers", workers, "Worker threads (0 = hardware concurrency)")
        ->capture_default_str();
}

unsigned resolve_workers(unsigned w) {
    if (w != 0) return w;
    return std::max(1u, std::thread::hardware_concurrency());
}

void check_positive(int v, const char* key) {
    if (v < 1) throw ConfigError(std::string(key) + " must be >= 1");
}

void check_level(double level) {
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("--level: level must lie in (0,1)");
}

BootstrapConfig bootstrap_from(const Options& o) {
    check_level(o.level);
    BootstrapConfig b;
    b.level = o.level;
    b.n_boot = o.n_boot;
    if (o.n_boot < 1) throw ConfigError("--n-boot must be >= 1");
    try {
        b.block_rule = BlockRule::parse(o.block_rule);
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("--block-rule: ") + e.what());
    }
    b.seed = o.seed;
    b.workers = resolve_workers(o.workers);
    return b;
}

EstimationConfig apply_flags(EstimationConfig c, const EstimationFlags& f) {
    if (!f.variant.empty()) {
        try {
            c.variant = parse_variant(f.variant.c_str());
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("--variant: ") + e.what());
        }
    }
    if (f.lag_order) {
        if (*f.lag_order < 0) throw ConfigError("--lag-order must be >= 0");
        c.lag_order = *f.lag_order;
    }
    if (f.basis_degree) {
        if (*f.basis_degree < 1) throw ConfigError("--basis-degree must be >= 1");
        c.basis_degree = *f.basis_degree;
    }
    if (f.solver_tol) {
        if (!(*f.solver_tol > 0.0)) throw ConfigError("--solver-tol must be > 0");
        c.solver.tol = *f.solver_tol;
    }
    if (f.pooled_recon) c.pooling = ReconstructionPooling::Pooled;
    if (f.free_midas_sign) c.nonneg_midas = false;
    return c;
}

std::pair<MixedPanel, EstimationConfig> load(const Options& o) {
    if (o.manifest.empty()) throw ConfigError("--manifest is required");
    const Manifest man = read_manifest(o.manifest);
    const EstimationConfig config = apply_flags(man.estimation, o.est);
    return {load_panel(man), config};
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

/// Writes every file only after all of them have been produced.
void emit(const fs::path& dir, const std::vector<std::pair<std::string, std::string>>& files) {
    fs::create_directories(dir);
    for (const auto& [name, content] : files) atomic_write(dir / name, content);
}

void print_weights(std::ostream& os, const FitResult& f) {
    std::vector<std::pair<double, std::string>> ws;
    for (std::size_t j = 0; j < f.donor_ids.size(); ++j)
        ws.emplace_back(f.weights(static_cast<Eigen::Index>(j)), f.donor_ids[j]);
    std::stable_sort(ws.begin(), ws.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    os << "weights (largest first):\n";
    int shown = 0;
    double rest = 0.0;
    for (const auto& [w, id] : ws) {
        if (w <= 1e-10) continue;
        if (shown < 12) {
            os << "  " << std::left << std::setw(16) << id << std::right << std::fixed
               << std::setprecision(4) << w;
            if (auto it = f.midas.find(id); it != f.midas.end()) {
                os << "   B = (";
                for (Eigen::Index k = 0; k < it->second.weights.size(); ++k)
                    os << (k ? ", " : "") << std::setprecision(3) << it->second.weights(k);
                os << ")";
            }
            os << '\n';
            ++shown;
        } else {
            rest += w;
        }
    }
    if (rest > 0.0) os << "  (other donors)   " << std::setprecision(4) << rest << '\n';
    os << std::defaultfloat;
}

void print_fit(std::ostream& os, const FitResult& f, const EffectSeries& e) {
    os << "variant " << to_string(f.config.variant) << ", T0 = " << f.T0 << ", "
       << f.donor_ids.size() << " donors\n";
    print_weights(os, f);
    os << std::setprecision(6) << "pre_mse  " << f.pre_mse << '\n'
       << "solver   " << (f.status == SolveStatus::Converged ? "converged" : "max_iter")
       << " after " << f.iterations << " iterations (kkt " << f.kkt_residual << ")\n"
       << "ATE      " << e.ate << " over " << e.effects.size() << " periods\n";
    if (!f.diagnostics.empty()) os << f.diagnostics.size() << " diagnostic(s) in fit.json\n";
}

void debug_diagnostics(std::ostream& err, const FitResult& f) {
    if (log_level() < 2) return;
    for (const auto& d : f.diagnostics)
        err << "[debug] " << (d.unit.empty() ? "panel" : d.unit) << ": " << d.message << '\n';
}

double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_fit(const Options& o, std::ostream& out, std::ostream& err) {
    auto [panel, config] = load(o);
    const FitResult f = fit(panel, config);
    const EffectSeries e = effects(f, panel);
    emit(o.out, {{"fit.json", dump(to_json(f))},
                 {"effects.json", dump(to_json(e))},
                 {"effects.csv", effects_csv(e)}});
    debug_diagnostics(err, f);
    if (log_level() >= 1) {
        print_fit(out, f, e);
        out << "wrote fit.json, effects.json, effects.csv to " << o.out << '\n';
    }
    return 0;
}

int cmd_infer(const Options& o, std::ostream& out, std::ostream& err) {
    const BootstrapConfig boot = bootstrap_from(o);
    auto [panel, config] = load(o);
    (void)boot.block_rule.block_length(panel.T0);
    const FitResult f = fit(panel, config);
    const EffectSeries e = effects(f, panel);
    const CiResult ci = block_bootstrap_ci(panel, f, e, boot);
    emit(o.out, {{"fit.json", dump(to_json(f))},
                 {"effects.json", dump(to_json(e))},
                 {"effects.csv", effects_csv(e)},
                 {"ci.json", dump(to_json(ci))},
                 {"boot_stats.csv", boot_stats_csv(ci)}});
    debug_diagnostics(err, f);
    if (log_level() >= 1) {
        print_fit(out, f, e);
        out << std::setprecision(6) << "CI       " << ci.level * 100 << "%: [" << ci.ci_lower
            << ", " << ci.ci_upper << "]  (N = " << ci.n_boot << ", m = " << ci.block_length
            << ", sigma_v_hat = " << ci.sigma_v_hat << ")\n"
            << "wrote fit.json, effects.*, ci.json, boot_stats.csv to " << o.out << '\n';
    }
    return 0;
}

int cmd_placebo(const Options& o, std::ostream& out, std::ostream& err) {
    auto [panel, config] = load(o);
    if (o.pseudo_t0 < 1 || o.pseudo_t0 >= panel.T0)
        throw ConfigError("--pseudo-t0 must lie in [1, T0) = [1, " + std::to_string(panel.T0) +
                          ")");
    auto [f, e] = placebo_in_time(panel, o.pseudo_t0, config);
    nlohmann::json summary = to_json(e);
    summary["pseudo_T0"] = o.pseudo_t0;
    summary["T0"] = panel.T0;
    emit(o.out, {{"placebo_fit.json", dump(to_json(f))},
                 {"placebo_effects.json", dump(summary)},
                 {"placebo_effects.csv", effects_csv(e)}});
    debug_diagnostics(err, f);
    if (log_level() >= 1) {
        out << "placebo at pseudo T0 = " << o.pseudo_t0 << " (true T0 = " << panel.T0 << ")\n";
        print_fit(out, f, e);
        out << "wrote placebo_fit.json, placebo_effects.* to " << o.out << '\n';
    }
    return 0;
}

DgpConfig dgp_from(const Options& o) {
    DgpConfig d;
    d.J = o.J;
    d.seed = o.sim_seed;
    d.effect = o.effect;
    d.validate();
    return d;
}

int cmd_sim_coverage(const Options& o, std::ostream& out) {
    CoverageOptions c;
    if (!o.T0.empty()) c.T0_grid = o.T0;
    if (!o.T1.empty()) c.T1_grid = o.T1;
    check_positive(o.reps, "--reps");
    if (o.n_boot < 1) throw ConfigError("--n-boot must be >= 1");
    for (double l : o.levels)
        if (!(l > 0.0 && l < 1.0)) throw ConfigError("--levels: level must lie in (0,1)");
    c.reps = o.reps;
    c.n_boot = o.n_boot;
    c.levels = o.levels;
    try {
        c.block_rule = BlockRule::parse(o.block_rule);
        for (int t0 : c.T0_grid) (void)c.block_rule.block_length(t0);
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("--block-rule: ") + e.what());
    }
    for (int t : c.T1_grid)
        if (t < 2) throw ConfigError("--T1 must be >= 2");
    c.variant = o.est.variant.empty() ? Variant::MfScm : parse_variant(o.est.variant.c_str());
    c.pooling = parse_sim_pooling(o.pooling);
    c.workers = resolve_workers(o.workers);
    const DgpConfig dgp = dgp_from(o);
    const auto t0 = std::chrono::steady_clock::now();
    const CoverageExperimentResult r = coverage_experiment(dgp, c);
    emit(o.out, {{"coverage.json", dump(to_json(r))}, {"coverage.csv", coverage_table_csv(r)}});
    if (log_level() >= 1) {
        out << "coverage experiment: J = " << dgp.J << ", reps = " << c.reps
            << ", n_boot = " << c.n_boot << ", block rule " << c.block_rule.to_string() << '\n';
        out << "   T1    T0    m";
        for (double l : c.levels) out << "   cov@" << std::setw(4) << l << "  len@" << std::setw(4) << l;
        out << "  fail\n";
        for (const auto& cell : r.cells) {
            out << std::setw(5) << cell.T1 << std::setw(6) << cell.T0 << std::setw(5)
                << cell.block_length << std::fixed << std::setprecision(3);
            for (std::size_t l = 0; l < cell.levels.size(); ++l)
                out << std::setw(11) << cell.coverage[l] << std::setw(10) << cell.mean_length[l];
            out << std::setw(6) << cell.failures << std::defaultfloat << '\n';
        }
        out << std::setprecision(3) << "runtime " << elapsed(t0) << " s; wrote coverage.json, coverage.csv to "
            << o.out << '\n';
    }
    return 0;
}

int cmd_sim_risk(const Options& o, std::ostream& out) {
    RiskOptions ro;
    if (!o.T0.empty()) ro.T0_grid = o.T0;
    if (o.T1.size() > 1) throw ConfigError("--T1 takes a single value for sim-risk");
    if (!o.T1.empty()) ro.T1 = o.T1.front();
    for (int t : ro.T0_grid) check_positive(t, "--T0");
    check_positive(ro.T1, "--T1");
    check_positive(o.S, "--S");
    check_positive(o.M, "--M");
    ro.S = o.S;
    ro.M = o.M;
    if (!o.est.variant.empty()) ro.variants = {parse_variant(o.est.variant.c_str())};
    ro.pooling = parse_sim_pooling(o.pooling);
    ro.workers = resolve_workers(o.workers);
    const DgpConfig dgp = dgp_from(o);
    const auto t0 = std::chrono::steady_clock::now();
    const RiskExperimentResult r = risk_ratio_experiment(dgp, ro);
    emit(o.out, {{"risk.json", dump(to_json(r))}, {"risk.csv", risk_plot_csv(r)}});
    if (log_level() >= 1) {
        out << "risk-ratio experiment: J = " << dgp.J << ", T1 = " << ro.T1 << ", S = " << ro.S
            << ", M = " << ro.M << '\n';
        out << "    T0";
        for (Variant v : ro.variants) out << std::setw(16) << to_string(v);
        out << '\n';
        for (const auto& cell : r.cells) {
            out << std::setw(6) << cell.T0 << std::fixed << std::setprecision(4);
            for (std::size_t v = 0; v < cell.variants.size(); ++v)
                out << std::setw(16) << cell.mean_ratio[v];
            out << std::defaultfloat << '\n';
            for (const auto& e : cell.errors) out << "        error: " << e << '\n';
        }
        out << std::setprecision(3) << "runtime " << elapsed(t0) << " s; wrote risk.json, risk.csv to "
            << o.out << '\n';
    }
    return 0;
}

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Mixed-frequency synthetic control: estimation, inference and simulation"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    auto* fit_cmd = app.add_subcommand("fit", "Fit weights and MIDAS coefficients, report effects");
    auto* infer_cmd = app.add_subcommand("infer", "Fit, then block-bootstrap confidence interval");
    auto* placebo_cmd = app.add_subcommand("placebo", "Placebo-in-time refit at a pseudo T0");
    auto* cov_cmd = app.add_subcommand("sim-coverage", "Monte Carlo coverage experiment");
    auto* risk_cmd = app.add_subcommand("sim-risk", "Monte Carlo risk-ratio experiment");

    for (auto* sub : {fit_cmd, infer_cmd, placebo_cmd}) {
        sub->add_option("--manifest", o.manifest, "Panel manifest (JSON)");
        sub->add_option("--out", o.out, "Output directory")->capture_default_str();
        add_estimation_flags(sub, o.est);
        add_workers(sub, o.workers);
    }
    infer_cmd->add_option("--seed", o.seed, "Bootstrap seed")->capture_default_str();
    infer_cmd->add_option("--level", o.level, "Confidence level in (0,1)")->capture_default_str();
    infer_cmd->add_option("--n-boot", o.n_boot, "Bootstrap draws")->capture_default_str();
    infer_cmd->add_option("--block-rule", o.block_rule, "pow:A | fixed:M | minpow:A:MIN")
        ->capture_default_str();
    placebo_cmd->add_option("--pseudo-t0", o.pseudo_t0, "Pseudo treatment date in [1, T0)")
        ->required();

    for (auto* sub : {cov_cmd, risk_cmd}) {
        sub->add_option("--out", o.out, "Output directory")->capture_default_str();
        sub->add_option("--seed", o.sim_seed, "DGP seed (oracle draw and replicate streams)")
            ->capture_default_str();
        sub->add_option("--J", o.J, "Donors (split evenly across frequency classes)")
            ->capture_default_str();
        sub->add_option("--effect", o.effect, "Constant treatment effect after T0")
            ->capture_default_str();
        sub->add_option("--pooling", o.pooling,
                        "Low-frequency reconstruction {per_unit|pooled|auto}")
            ->capture_default_str();
        add_workers(sub, o.workers);
    }
    cov_cmd->add_option("--T0", o.T0, "Pre-treatment lengths")->default_str("40");
    cov_cmd->add_option("--T1", o.T1, "Post-treatment lengths")->default_str("20");
    cov_cmd->add_option("--reps", o.reps, "Monte Carlo replications per cell")->capture_default_str();
    cov_cmd->add_option("--n-boot", o.n_boot, "Bootstrap draws per replication")
        ->capture_default_str();
    cov_cmd->add_option("--levels", o.levels, "Confidence levels")->default_str("0.9 0.95 0.99");
    cov_cmd->add_option("--block-rule", o.block_rule, "pow:A | fixed:M | minpow:A:MIN")
        ->default_str("minpow:0.5:10");
    cov_cmd->add_option("--variant", o.est.variant, "Estimator variant {mfscm|no-midas|baseline-only}")
        ->default_str("mfscm");

    risk_cmd->add_option("--T0", o.T0, "Pre-treatment lengths")->default_str("20 80 320 1280");
    risk_cmd->add_option("--T1", o.T1, "Post-treatment length")->default_str("100");
    risk_cmd->add_option("--S", o.S, "Training replications per T0")->capture_default_str();
    risk_cmd->add_option("--M", o.M, "Evaluation draws")->capture_default_str();
    risk_cmd->add_option("--variant", o.est.variant,
                         "Evaluate a single variant {mfscm|no-midas|baseline-only}")
        ->default_str("all three");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        // Subcommand help is raised with the subcommand still selected.
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return 0;
        }
        err << "error: " << e.what() << '\n';
        return 2;
    }

    // sim-coverage uses its own block-rule default.
    if (cov_cmd->parsed() && cov_cmd->count("--block-rule") == 0) o.block_rule = "minpow:0.5:10";

    try {
        if (fit_cmd->parsed()) return cmd_fit(o, out, err);
        if (infer_cmd->parsed()) return cmd_infer(o, out, err);
        if (placebo_cmd->parsed()) return cmd_placebo(o, out, err);
        if (cov_cmd->parsed()) return cmd_sim_coverage(o, out);
        if (risk_cmd->parsed()) return cmd_sim_risk(o, out);
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

int run(int argc, char** argv) { return run(argc, argv, std::cout, std::cerr); }

}  // namespace mfscm::cli
