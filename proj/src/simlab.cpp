#include "mfscm/simlab.hpp"

#include "mfscm/error.hpp"
#include "mfscm/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

namespace mfscm {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr std::uint64_t kOracleDomain = 0x0c1e;
constexpr std::uint64_t kPanelDomain = 0x9a2e1;
constexpr std::uint64_t kBootSeedDomain = 0xb5eed;
constexpr std::uint64_t kEvalBase = 0xe7a1ULL << 48;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

VectorXd softmax(const VectorXd& s) {
    const VectorXd e = (s.array() - s.maxCoeff()).exp().matrix();
    return e / e.sum();
}

std::string donor_id(int j) { return "d" + std::to_string(j + 1); }

}  // namespace

const char* to_string(SimPooling p) noexcept {
    switch (p) {
        case SimPooling::PerUnit: return "per_unit";
        case SimPooling::Pooled: return "pooled";
        case SimPooling::Auto: return "auto";
    }
    return "?";
}

SimPooling parse_sim_pooling(const std::string& name) {
    if (name == "per_unit") return SimPooling::PerUnit;
    if (name == "pooled") return SimPooling::Pooled;
    if (name == "auto") return SimPooling::Auto;
    throw ConfigError("pooling must be per_unit, pooled or auto (got '" + name + "')");
}

VectorXd oracle_midas_shapes(const MidasShape& shape, int m) {
    if (m < 1) throw DomainError("shape length must be >= 1");
    VectorXd w(m);
    switch (shape.kind) {
        case MidasShape::Kind::ExpAlmon:
            for (int k = 1; k <= m; ++k) w(k - 1) = shape.zeta1 * k + shape.zeta2 * k * k;
            return softmax(w);
        case MidasShape::Kind::Beta: {
            if (!(shape.zeta1 > 0.0 && shape.zeta2 > 0.0))
                throw DomainError("beta lag requires zeta1 > 0 and zeta2 > 0");
            constexpr double eps = 1e-8;
            for (int k = 1; k <= m; ++k) {
                const double x = std::clamp(static_cast<double>(k) / m, eps, 1.0 - eps);
                w(k - 1) = std::pow(x, shape.zeta1 - 1.0) * std::pow(1.0 - x, shape.zeta2 - 1.0);
            }
            return w / w.sum();
        }
        case MidasShape::Kind::FrontLoaded:
            for (int k = 1; k <= m; ++k) w(k - 1) = m - k + 1;
            return w / w.sum();
    }
    throw DomainError("unknown MIDAS shape");
}

void DgpConfig::validate() const {
    if (J < 3) throw ConfigError("J must be >= 3");
    if (Q < 1) throw ConfigError("Q must be >= 1");
    if (P < 1) throw ConfigError("P must be >= 1");
    if (sigma < 0 || sigma_h < 0 || sigma_u < 0) throw ConfigError("noise scales must be >= 0");
    if (m < 2) throw ConfigError("m must be >= 2");
    if (m_low < 2) throw ConfigError("m_low must be >= 2");
    if (basis_degree < 1 || basis_degree > m) throw ConfigError("basis degree must lie in [1, m]");
}

GroupRanges group_ranges(const DgpConfig& dgp) { return {dgp.J1(), dgp.J2(), dgp.J}; }

OracleDraw draw_oracle(const DgpConfig& dgp) {
    dgp.validate();
    auto rng = make_stream(dgp.seed, kOracleDomain, 0);
    std::uniform_real_distribution<double> u3(-3.0, 3.0), u1(-1.0, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);
    OracleDraw o;
    o.phi.resize(dgp.Q, dgp.J);
    o.phi_h.resize(dgp.Q, dgp.J);
    for (int j = 0; j < dgp.J; ++j)
        for (int q = 0; q < dgp.Q; ++q) o.phi(q, j) = u3(rng);
    for (int j = 0; j < dgp.J; ++j)
        for (int q = 0; q < dgp.Q; ++q) o.phi_h(q, j) = u3(rng);
    o.beta.resize(dgp.P, dgp.Q);
    o.beta_h.resize(dgp.P, dgp.Q);
    for (int p = 0; p < dgp.P; ++p)
        for (int q = 0; q < dgp.Q; ++q) o.beta(p, q) = u1(rng);
    for (int p = 0; p < dgp.P; ++p)
        for (int q = 0; q < dgp.Q; ++q) o.beta_h(p, q) = u1(rng);

    const GroupRanges g = group_ranges(dgp);
    o.omega.resize(dgp.J);
    const int bounds[4] = {0, g.same_end, g.lower_end, g.higher_end};
    int groups = 0;
    for (int k = 0; k < 3; ++k) groups += bounds[k + 1] > bounds[k];
    for (int k = 0; k < 3; ++k) {
        const int n = bounds[k + 1] - bounds[k];
        if (n == 0) continue;
        VectorXd s(n);
        for (int i = 0; i < n; ++i) s(i) = z(rng);
        o.omega.segment(bounds[k], n) = softmax(s) / groups;
    }

    const LagPolyBasis basis{dgp.basis_degree};
    const MatrixXd lag = basis.lag_matrix(dgp.m);
    const VectorXd B = oracle_midas_shapes(dgp.shape, dgp.m);
    for (int j = g.lower_end; j < g.higher_end; ++j) {
        const VectorXd zeta = lag.colPivHouseholderQr().solve(B);
        o.zeta0.push_back(zeta);
        o.B0.push_back(lag * zeta);
    }
    return o;
}

SimPanel gen_panel(const DgpConfig& dgp, const OracleDraw& oracle, int T0, int T1,
                   std::uint64_t rep_seed) {
    dgp.validate();
    if (T0 < 1 || T1 < 1) throw ConfigError("T0 and T1 must be >= 1");
    const int T = T0 + T1;
    const int J = dgp.J, Q = dgp.Q, P = dgp.P, m = dgp.m, ml = dgp.m_low;
    const GroupRanges g = group_ranges(dgp);
    auto rng = make_stream(dgp.seed, kPanelDomain, rep_seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u3(-3.0, 3.0);

    MatrixXd phi = oracle.phi, phi_h = oracle.phi_h;
    if (dgp.redraw_phi) {
        for (Index i = 0; i < phi.size(); ++i) phi.data()[i] = u3(rng);
        for (Index i = 0; i < phi_h.size(); ++i) phi_h.data()[i] = u3(rng);
    }

    SimPanel sp;
    sp.latent = MatrixXd::Zero(T, J);
    sp.latent_mean = MatrixXd::Zero(T, J);
    MixedPanel& panel = sp.panel;
    panel.T0 = T0;
    panel.T1 = T1;
    panel.Q = Q;

    std::vector<MatrixXd> X(static_cast<std::size_t>(J));
    for (int j = 0; j < J; ++j) {
        MatrixXd x(Q, T);
        for (int t = 0; t < T; ++t)
            for (int q = 0; q < Q; ++q) x(q, t) = phi(q, j) + z(rng);
        X[static_cast<std::size_t>(j)] = std::move(x);
    }

    for (int j = 0; j < J; ++j) {
        const MatrixXd& x = X[static_cast<std::size_t>(j)];
        UnitSeries u;
        u.id = donor_id(j);
        u.covariates = x;
        if (j < g.lower_end) {
            // Lags before t = 1 are initialized at X_1.
            std::vector<double> y(static_cast<std::size_t>(T));
            for (int t = 1; t <= T; ++t) {
                double mean = 0.0;
                for (int p = 0; p < P; ++p)
                    mean += oracle.beta.row(p).dot(x.col(std::max(1, t - p) - 1));
                const double v = mean + dgp.sigma * z(rng);
                sp.latent_mean(t - 1, j) = mean;
                sp.latent(t - 1, j) = v;
                y[static_cast<std::size_t>(t - 1)] = v;
            }
            if (j < g.same_end) {
                u.freq = FrequencyClass::same();
                u.values = std::move(y);
                for (int t = 1; t <= T; ++t) u.obs_times.push_back(t);
            } else {
                u.freq = FrequencyClass::lower(ml);
                u.obs_times = u.freq.observation_times(T);
                for (int t : u.obs_times) {
                    double acc = 0.0;
                    for (int s = 1; s <= ml; ++s)
                        acc += y[static_cast<std::size_t>(t - ml + s - 1)] / ml;
                    u.values.push_back(acc);
                }
            }
        } else {
            // Sub-period tau = m*t - (k-1); P-1 presample sub-periods.
            const int n_tau = m * T + (P - 1);
            MatrixXd xh(Q, n_tau);
            for (int c = 0; c < n_tau; ++c)
                for (int q = 0; q < Q; ++q) xh(q, c) = phi_h(q, j) + z(rng);
            std::vector<double> yh(static_cast<std::size_t>(m * T));
            for (int tau = 1; tau <= m * T; ++tau) {
                double v = 0.0;
                for (int p = 0; p < P; ++p) v += oracle.beta_h.row(p).dot(xh.col(tau - p + P - 2));
                yh[static_cast<std::size_t>(tau - 1)] = v + dgp.sigma_h * z(rng);
            }
            u.freq = FrequencyClass::higher(m);
            u.values.resize(static_cast<std::size_t>(m * T));
            for (int t = 1; t <= T; ++t) u.obs_times.push_back(t);
            const VectorXd& B = oracle.B0[static_cast<std::size_t>(j - g.lower_end)];
            for (int t = 1; t <= T; ++t) {
                double agg = 0.0;
                for (int k = 1; k <= m; ++k) {
                    const double v = yh[static_cast<std::size_t>(m * t - (k - 1) - 1)];
                    u.values[static_cast<std::size_t>((t - 1) * m + (k - 1))] = v;
                    agg += B(k - 1) * v;
                }
                sp.latent(t - 1, j) = agg;
                sp.latent_mean(t - 1, j) = agg;
            }
        }
        panel.donors.push_back(std::move(u));
    }

    UnitSeries& tr = panel.treated;
    tr.id = "treated";
    tr.freq = FrequencyClass::same();
    tr.covariates = MatrixXd::Zero(Q, T);
    for (int j = 0; j < J; ++j) tr.covariates += oracle.omega(j) * X[static_cast<std::size_t>(j)];
    sp.untreated = sp.latent * oracle.omega;
    for (int t = 0; t < T; ++t) sp.untreated(t) += dgp.sigma_u * z(rng);
    tr.values.resize(static_cast<std::size_t>(T));
    for (int t = 1; t <= T; ++t) {
        tr.obs_times.push_back(t);
        tr.values[static_cast<std::size_t>(t - 1)] =
            sp.untreated(t - 1) + (t > T0 ? dgp.effect : 0.0);
    }
    return sp;
}

EstimationConfig sim_estimation(const DgpConfig& dgp, Variant variant) {
    EstimationConfig c;
    c.lag_order = dgp.P - 1;
    c.basis_degree = dgp.basis_degree;
    c.variant = variant;
    return c;
}

FitResult fit_with_pooling(const MixedPanel& panel, EstimationConfig config, SimPooling pooling,
                           bool* fell_back) {
    if (fell_back) *fell_back = false;
    if (pooling == SimPooling::Pooled) {
        config.pooling = ReconstructionPooling::Pooled;
        return fit(panel, config);
    }
    config.pooling = ReconstructionPooling::PerUnit;
    if (pooling == SimPooling::PerUnit) return fit(panel, config);
    try {
        return fit(panel, config);
    } catch (const SampleSizeError&) {
    } catch (const IllPosedError&) {
    }
    if (fell_back) *fell_back = true;
    config.pooling = ReconstructionPooling::Pooled;
    return fit(panel, config);
}

namespace {

// Post-treatment evaluation draws stacked into one surface.
struct EvalSurface {
    int rows = 0;
    VectorXd y;                        ///< untreated treated outcome
    std::vector<VectorXd> same;        ///< observed outcome (baseline donors)
    std::vector<VectorXd> oracle_low;  ///< beta'X (low-frequency donors)
    std::vector<MatrixXd> low_feats;   ///< [1, X_t', ..., X_{t-P}'] (low-frequency donors)
    std::vector<MatrixXd> high;        ///< rows x m (high-frequency donors)
};

EvalSurface build_surface(const DgpConfig& dgp, const OracleDraw& oracle, int T1, int M,
                          int est_lags, unsigned workers) {
    const GroupRanges g = group_ranges(dgp);
    const int Q = dgp.Q, m = dgp.m;
    std::vector<SimPanel> draws(static_cast<std::size_t>(M));
    parallel_for(draws.size(), workers, [&](std::size_t r) {
        draws[r] = gen_panel(dgp, oracle, 1, T1, kEvalBase + r);
    });
    EvalSurface s;
    s.rows = M * T1;
    s.y.resize(s.rows);
    s.same.assign(static_cast<std::size_t>(g.same_end), VectorXd(s.rows));
    s.oracle_low.assign(static_cast<std::size_t>(g.lower_end - g.same_end), VectorXd(s.rows));
    s.low_feats.assign(static_cast<std::size_t>(g.lower_end - g.same_end),
                       MatrixXd(s.rows, 1 + (est_lags + 1) * Q));
    s.high.assign(static_cast<std::size_t>(g.higher_end - g.lower_end), MatrixXd(s.rows, m));
    for (int r = 0; r < M; ++r) {
        const SimPanel& sp = draws[static_cast<std::size_t>(r)];
        for (int i = 0; i < T1; ++i) {
            const int t = i + 2;  // skip the single pre-period
            const Index row = static_cast<Index>(r) * T1 + i;
            s.y(row) = sp.untreated(t - 1);
            for (int j = 0; j < g.same_end; ++j)
                s.same[static_cast<std::size_t>(j)](row) = sp.latent(t - 1, j);
            for (int j = g.same_end; j < g.lower_end; ++j) {
                const auto jj = static_cast<std::size_t>(j - g.same_end);
                s.oracle_low[jj](row) = sp.latent_mean(t - 1, j);
                const MatrixXd& x = sp.panel.donors[static_cast<std::size_t>(j)].covariates;
                s.low_feats[jj](row, 0) = 1.0;
                for (int p = 0; p <= est_lags; ++p)
                    s.low_feats[jj].row(row).segment(1 + p * Q, Q) =
                        x.col(std::max(1, t - p) - 1).transpose();
            }
            for (int j = g.lower_end; j < g.higher_end; ++j) {
                const UnitSeries& u = sp.panel.donors[static_cast<std::size_t>(j)];
                for (int k = 1; k <= m; ++k)
                    s.high[static_cast<std::size_t>(j - g.lower_end)](row, k - 1) = u.high(t, k);
            }
        }
    }
    return s;
}

double surface_risk(const EvalSurface& s, const DgpConfig& dgp, const FitResult& f) {
    const GroupRanges g = group_ranges(dgp);
    VectorXd pred = VectorXd::Zero(s.rows);
    for (int j = 0; j < g.same_end; ++j)
        pred += f.weights(j) * s.same[static_cast<std::size_t>(j)];
    for (int j = g.same_end; j < g.lower_end; ++j) {
        if (f.weights(j) == 0.0) continue;
        const ReconstructionModel& rm = f.recon_models.at(f.donor_ids[static_cast<std::size_t>(j)]);
        VectorXd coef(1 + rm.beta.size());
        coef(0) = rm.alpha;
        for (Index p = 0; p < rm.beta.rows(); ++p)
            coef.segment(1 + p * rm.beta.cols(), rm.beta.cols()) = rm.beta.row(p).transpose();
        pred += f.weights(j) * (s.low_feats[static_cast<std::size_t>(j - g.same_end)] * coef);
    }
    for (int j = g.lower_end; j < g.higher_end; ++j) {
        if (f.weights(j) == 0.0) continue;
        const MidasWeights& mw = f.midas.at(f.donor_ids[static_cast<std::size_t>(j)]);
        pred += f.weights(j) * (s.high[static_cast<std::size_t>(j - g.lower_end)] * mw.weights);
    }
    return (s.y - pred).squaredNorm() / s.rows;
}

double surface_infimum(const EvalSurface& s, const DgpConfig& dgp, const SolverOptions& opts) {
    const GroupRanges g = group_ranges(dgp);
    AlignedDesign d;
    d.T0 = s.rows;
    d.Q = 0;
    d.z1 = s.y;
    for (int j = 0; j < g.higher_end; ++j) {
        DesignColumn c;
        c.id = donor_id(j);
        c.donor_index = static_cast<std::size_t>(j);
        if (j < g.same_end) {
            c.fixed = s.same[static_cast<std::size_t>(j)];
        } else if (j < g.lower_end) {
            c.fixed = s.oracle_low[static_cast<std::size_t>(j - g.same_end)];
        } else {
            c.midas = true;
            c.high = s.high[static_cast<std::size_t>(j - g.lower_end)];
            c.cov_rows.resize(0);
        }
        d.donors.push_back(std::move(c));
    }
    const SimplexQP qp = build_lifted_problem(d, LagPolyBasis{dgp.basis_degree}, true);
    return solve_joint(qp, opts).objective;
}

}  // namespace

RiskExperimentResult risk_ratio_experiment(const DgpConfig& dgp, const RiskOptions& opt) {
    const auto start = std::chrono::steady_clock::now();
    dgp.validate();
    if (opt.T0_grid.empty()) throw ConfigError("T0 grid is empty");
    if (opt.variants.empty()) throw ConfigError("variant list is empty");
    if (opt.S < 1 || opt.M < 1 || opt.T1 < 1) throw ConfigError("S, M and T1 must be >= 1");
    const OracleDraw oracle = draw_oracle(dgp);
    const EvalSurface surf =
        build_surface(dgp, oracle, opt.T1, opt.M, dgp.P - 1, opt.workers);
    const double denom = surface_infimum(surf, dgp, SolverOptions{});

    RiskExperimentResult res;
    res.dgp = dgp;
    res.T1 = opt.T1;
    res.S = opt.S;
    res.M = opt.M;
    res.pooling = opt.pooling;
    const std::size_t V = opt.variants.size();
    for (int T0 : opt.T0_grid) {
        if (T0 < 2) throw ConfigError("T0 grid values must be >= 2");
        RiskCell cell;
        cell.T0 = T0;
        cell.denominator = denom;
        cell.variants = opt.variants;
        struct Slot {
            std::vector<double> ratio;
            std::vector<std::string> err;
            int fallbacks = 0;
        };
        std::vector<Slot> slots(static_cast<std::size_t>(opt.S));
        parallel_for(slots.size(), opt.workers, [&](std::size_t s) {
            Slot& sl = slots[s];
            sl.ratio.assign(V, std::nan(""));
            sl.err.assign(V, "");
            const std::uint64_t rep = (static_cast<std::uint64_t>(T0) << 32) + s;
            const SimPanel sp = gen_panel(dgp, oracle, T0, 1, rep);
            for (std::size_t v = 0; v < V; ++v) {
                try {
                    bool fb = false;
                    const FitResult f = fit_with_pooling(
                        sp.panel, sim_estimation(dgp, opt.variants[v]), opt.pooling, &fb);
                    sl.fallbacks += fb;
                    sl.ratio[v] = surface_risk(surf, dgp, f) / denom;
                } catch (const Error& e) {
                    sl.err[v] = e.what();
                }
            }
        });
        cell.mean_ratio.assign(V, 0.0);
        cell.se_ratio.assign(V, 0.0);
        cell.min_ratio.assign(V, std::numeric_limits<double>::infinity());
        cell.completed.assign(V, 0);
        for (std::size_t v = 0; v < V; ++v) {
            double sum = 0.0, sq = 0.0;
            int n = 0;
            for (const Slot& sl : slots) {
                if (!sl.err[v].empty()) {
                    if (cell.errors.size() < 10)
                        cell.errors.push_back(std::string(to_string(opt.variants[v])) + ": " +
                                              sl.err[v]);
                    continue;
                }
                sum += sl.ratio[v];
                sq += sl.ratio[v] * sl.ratio[v];
                cell.min_ratio[v] = std::min(cell.min_ratio[v], sl.ratio[v]);
                ++n;
            }
            cell.completed[v] = n;
            if (n > 0) {
                cell.mean_ratio[v] = sum / n;
                const double var = n > 1 ? (sq - n * cell.mean_ratio[v] * cell.mean_ratio[v]) / (n - 1) : 0.0;
                cell.se_ratio[v] = std::sqrt(std::max(0.0, var) / n);
            } else {
                cell.mean_ratio[v] = std::nan("");
            }
        }
        for (const Slot& sl : slots) cell.pooled_fallbacks += sl.fallbacks;
        res.cells.push_back(std::move(cell));
    }
    res.runtime_seconds = seconds_since(start);
    return res;
}

CoverageExperimentResult coverage_experiment(const DgpConfig& dgp, const CoverageOptions& opt) {
    const auto start = std::chrono::steady_clock::now();
    dgp.validate();
    if (opt.T0_grid.empty() || opt.T1_grid.empty()) throw ConfigError("grids must be nonempty");
    if (opt.reps < 1) throw ConfigError("reps must be >= 1");
    if (opt.n_boot < 1) throw ConfigError("n-boot must be >= 1");
    for (double l : opt.levels)
        if (!(l > 0.0 && l < 1.0)) throw ConfigError("level must lie in (0,1)");
    const OracleDraw oracle = draw_oracle(dgp);

    CoverageExperimentResult res;
    res.dgp = dgp;
    res.n_boot = opt.n_boot;
    res.block_rule = opt.block_rule;
    res.pooling = opt.pooling;
    const std::size_t L = opt.levels.size();
    for (int T1 : opt.T1_grid) {
        for (int T0 : opt.T0_grid) {
            CoverageCell cell;
            cell.T0 = T0;
            cell.T1 = T1;
            cell.levels = opt.levels;
            cell.reps = opt.reps;
            cell.block_length = opt.block_rule.block_length(T0);
            struct Slot {
                bool ok = false;
                bool fallback = false;
                std::vector<char> covered;
                std::vector<double> length;
            };
            std::vector<Slot> slots(static_cast<std::size_t>(opt.reps));
            parallel_for(slots.size(), opt.workers, [&](std::size_t r) {
                Slot& sl = slots[r];
                const std::uint64_t rep = (static_cast<std::uint64_t>(T0) << 40) +
                                          (static_cast<std::uint64_t>(T1) << 20) + r;
                try {
                    const SimPanel sp = gen_panel(dgp, oracle, T0, T1, rep);
                    const FitResult f = fit_with_pooling(
                        sp.panel, sim_estimation(dgp, opt.variant), opt.pooling, &sl.fallback);
                    const EffectSeries es = effects(f, sp.panel);
                    BootstrapConfig bc;
                    bc.n_boot = opt.n_boot;
                    bc.block_rule = opt.block_rule;
                    bc.seed = stream_seed(dgp.seed, kBootSeedDomain, rep);
                    bc.level = opt.levels.front();
                    bc.workers = 1;
                    const auto cis = block_bootstrap_ci_levels(sp.panel, f, es, bc, opt.levels);
                    for (const CiResult& ci : cis) {
                        sl.covered.push_back(ci.ci_lower <= dgp.effect && dgp.effect <= ci.ci_upper);
                        sl.length.push_back(ci.ci_upper - ci.ci_lower);
                    }
                    sl.ok = true;
                } catch (const Error&) {
                    sl.ok = false;
                }
            });
            cell.coverage.assign(L, 0.0);
            cell.mean_length.assign(L, 0.0);
            int n = 0;
            for (const Slot& sl : slots) {
                if (!sl.ok) {
                    ++cell.failures;
                    continue;
                }
                ++n;
                cell.pooled_fallbacks += sl.fallback;
                for (std::size_t l = 0; l < L; ++l) {
                    cell.coverage[l] += sl.covered[l];
                    cell.mean_length[l] += sl.length[l];
                }
            }
            for (std::size_t l = 0; l < L; ++l) {
                cell.coverage[l] = n ? cell.coverage[l] / n : std::nan("");
                cell.mean_length[l] = n ? cell.mean_length[l] / n : std::nan("");
            }
            res.cells.push_back(std::move(cell));
        }
    }
    res.runtime_seconds = seconds_since(start);
    return res;
}

}  // namespace mfscm
