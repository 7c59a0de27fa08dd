#include "mfscm/estimator.hpp"

#include "mfscm/error.hpp"

#include <cmath>
#include <numeric>
#include <tuple>

namespace mfscm {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

template <typename E>
[[noreturn]] void rethrow_as(const E&, const std::string& msg) {
    throw E(msg);
}

// Re-raises a library error with the unit id prepended, keeping its type.
template <typename Fn>
auto annotated(const std::string& unit, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const SampleSizeError& e) {
        rethrow_as(e, "unit " + unit + ": " + e.what());
    } catch (const IllPosedError& e) {
        rethrow_as(e, "unit " + unit + ": " + e.what());
    } catch (const DomainError& e) {
        rethrow_as(e, "unit " + unit + ": " + e.what());
    }
}

bool included(const UnitSeries& u, Variant v) {
    return v != Variant::BaselineOnly || u.freq.is_same();
}

std::string label(const std::vector<std::string>& ids) {
    std::string s;
    for (const auto& id : ids) s += (s.empty() ? "" : ",") + id;
    return s;
}

}  // namespace

double FitResult::weight(const std::string& id) const {
    for (std::size_t j = 0; j < donor_ids.size(); ++j)
        if (donor_ids[j] == id) return weights(static_cast<Index>(j));
    throw DomainError("unknown donor '" + id + "'");
}

std::map<std::string, ReconstructionModel> fit_reconstructions(const MixedPanel& panel,
                                                               const EstimationConfig& config) {
    std::map<std::string, ReconstructionModel> out;
    const int P = config.lag_order;
    const int T0 = panel.T0;
    if (config.pooling == ReconstructionPooling::PerUnit) {
        for (const auto& u : panel.donors) {
            if (!u.freq.is_lower() || !included(u, config.variant)) continue;
            out[u.id] = annotated(u.id, [&] {
                return u.freq.mode == LowFreqMode::Aggregate
                           ? fit_low_freq_aggregate(u, P, config.als, T0)
                           : fit_low_freq_point_sample(u, P, T0);
            });
        }
        return out;
    }
    // One model per (ratio, mode, offset) group.
    std::map<std::tuple<int, int, int>, std::vector<const UnitSeries*>> groups;
    for (const auto& u : panel.donors) {
        if (!u.freq.is_lower() || !included(u, config.variant)) continue;
        groups[{u.freq.ratio, static_cast<int>(u.freq.mode), u.freq.offset}].push_back(&u);
    }
    for (const auto& [key, units] : groups) {
        std::vector<std::string> ids;
        for (const auto* u : units) ids.push_back(u->id);
        const ReconstructionModel shared = annotated(label(ids), [&] {
            return fit_low_freq_pooled(units, P, config.als, T0);
        });
        for (const auto* u : units) {
            ReconstructionModel m = shared;
            m.unit_id = u->id;
            out[u->id] = std::move(m);
        }
    }
    return out;
}

AlignedDesign build_design(const MixedPanel& panel, const EstimationConfig& config,
                           const std::map<std::string, ReconstructionModel>& recon) {
    const int T0 = panel.T0;
    const int Q = panel.Q;
    const Index rows = static_cast<Index>(Q + 1) * T0;
    AlignedDesign d;
    d.T0 = T0;
    d.Q = Q;
    d.covariate_scale = 1.0 / std::sqrt(static_cast<double>(T0));
    const double cs = d.covariate_scale;

    auto cov_rows = [&](const UnitSeries& u) {
        VectorXd c(static_cast<Index>(Q) * T0);
        for (int q = 0; q < Q; ++q)
            for (int t = 0; t < T0; ++t) c(q * T0 + t) = cs * u.covariates(q, t);
        return c;
    };

    d.z1.resize(rows);
    for (int t = 0; t < T0; ++t) d.z1(t) = panel.treated.values[static_cast<std::size_t>(t)];
    d.z1.tail(rows - T0) = cov_rows(panel.treated);

    const LagPolyBasis basis{config.basis_degree};
    for (std::size_t j = 0; j < panel.donors.size(); ++j) {
        const UnitSeries& u = panel.donors[j];
        if (!included(u, config.variant)) continue;
        DesignColumn col;
        col.id = u.id;
        col.donor_index = j;
        if (u.freq.is_higher() && config.variant == Variant::MfScm) {
            const int m = u.freq.ratio;
            col.midas = true;
            col.high.resize(T0, m);
            for (int t = 1; t <= T0; ++t)
                for (int k = 1; k <= m; ++k) col.high(t - 1, k - 1) = u.high(t, k);
            col.cov_rows = cov_rows(u);
        } else {
            col.fixed.resize(rows);
            if (u.freq.is_same()) {
                for (int t = 0; t < T0; ++t) col.fixed(t) = u.values[static_cast<std::size_t>(t)];
            } else if (u.freq.is_lower()) {
                const auto it = recon.find(u.id);
                if (it == recon.end()) throw DomainError("unit " + u.id + ": no reconstruction model");
                const auto y = reconstruct_baseline(it->second, u);
                for (int t = 0; t < T0; ++t) col.fixed(t) = y[static_cast<std::size_t>(t)];
            } else {
                const auto y = align_high_freq(u, uniform_midas_weights(u.freq.ratio, basis, u.id));
                for (int t = 0; t < T0; ++t) col.fixed(t) = y[static_cast<std::size_t>(t)];
            }
            col.fixed.tail(rows - T0) = cov_rows(u);
        }
        d.donors.push_back(std::move(col));
    }
    return d;
}

FitResult fit(const MixedPanel& panel, const EstimationConfig& config) {
    if (panel.donors.empty()) throw DomainError("donor pool is empty");
    require_valid(panel);
    if (config.lag_order < 0) throw ConfigError("P must be >= 0");
    if (config.basis_degree < 1) throw ConfigError("L must be >= 1");
    for (const auto& u : panel.donors)
        if (u.freq.is_higher() && config.variant == Variant::MfScm &&
            u.freq.ratio < config.basis_degree)
            throw ConfigError("L must not exceed the frequency ratio of unit " + u.id);
    bool any = false;
    for (const auto& u : panel.donors) any = any || included(u, config.variant);
    if (!any) throw DomainError("baseline-only variant requires same-frequency donors");

    FitResult res;
    res.config = config;
    res.T0 = panel.T0;
    res.recon_models = fit_reconstructions(panel, config);
    const AlignedDesign design = build_design(panel, config, res.recon_models);
    const LagPolyBasis basis{config.basis_degree};
    const SimplexQP qp = build_lifted_problem(design, basis, config.nonneg_midas);
    const JointSolution sol = solve_joint(qp, config.solver);

    res.donor_ids.reserve(panel.donors.size());
    for (const auto& u : panel.donors) res.donor_ids.push_back(u.id);
    res.weights = VectorXd::Zero(static_cast<Index>(panel.donors.size()));
    for (std::size_t i = 0; i < design.donors.size(); ++i)
        res.weights(static_cast<Index>(design.donors[i].donor_index)) = sol.w(static_cast<Index>(i));
    for (std::size_t k = 0; k < sol.midas.size(); ++k) {
        const auto& dc = design.donors[sol.midas_donor[k]];
        MidasWeights mw = sol.midas[k];
        mw.unit_id = dc.id;
        res.midas[dc.id] = std::move(mw);
    }
    // Frozen equal weights for high-frequency donors not freely estimated.
    for (const auto& u : panel.donors)
        if (u.freq.is_higher() && !res.midas.count(u.id))
            res.midas[u.id] = uniform_midas_weights(u.freq.ratio, basis, u.id);

    res.objective = sol.objective;
    res.kkt_residual = sol.kkt_residual;
    res.iterations = sol.iterations;
    res.status = sol.status;
    res.non_unique = sol.non_unique;
    for (std::size_t j : sol.degenerate_units) res.degenerate_units.push_back(design.donors[j].id);

    const auto yhat = counterfactual(res, panel, 1, panel.T0);
    double sse = 0.0;
    for (int t = 0; t < panel.T0; ++t) {
        const double e = panel.treated.values[static_cast<std::size_t>(t)] -
                         yhat[static_cast<std::size_t>(t)];
        sse += e * e;
    }
    res.pre_mse = sse / panel.T0;

    if (res.status == SolveStatus::MaxIter)
        res.diagnostics.push_back({"", "weight solver stopped at max_iter"});
    if (res.non_unique)
        res.diagnostics.push_back({"", "duplicate donor columns: weights are not unique"});
    for (const auto& id : res.degenerate_units)
        res.diagnostics.push_back({id, "zero weight; MIDAS weights reported as uniform"});
    for (const auto& [id, m] : res.recon_models) {
        if (m.backfilled)
            res.diagnostics.push_back({id, "covariate lags before t=1 backfilled with X_1"});
        if (!m.converged)
            res.diagnostics.push_back({id, "aggregation ALS stopped at max_iter"});
        if (m.pooled) res.diagnostics.push_back({id, "pooled reconstruction model"});
    }
    return res;
}

MatrixXd aligned_outcomes(const FitResult& fit, const MixedPanel& panel, int t_begin, int t_end) {
    if (t_begin < 1 || t_end > panel.horizon() || t_end < t_begin)
        throw DomainError("time range [" + std::to_string(t_begin) + ", " + std::to_string(t_end) +
                          "] outside 1.." + std::to_string(panel.horizon()));
    if (fit.donor_ids.size() != panel.donors.size())
        throw DomainError("fit does not match panel donor pool");
    const Index n = t_end - t_begin + 1;
    MatrixXd Y = MatrixXd::Zero(n, static_cast<Index>(panel.donors.size()));
    for (std::size_t j = 0; j < panel.donors.size(); ++j) {
        const UnitSeries& u = panel.donors[j];
        if (u.id != fit.donor_ids[j]) throw DomainError("fit does not match panel donor order");
        std::vector<double> y;
        if (u.freq.is_same()) {
            y = u.values;
        } else if (u.freq.is_lower()) {
            const auto it = fit.recon_models.find(u.id);
            if (it == fit.recon_models.end()) continue;  // excluded by the variant
            y = reconstruct_baseline(it->second, u);
        } else {
            y = align_high_freq(u, fit.midas.at(u.id));
        }
        for (Index i = 0; i < n; ++i)
            Y(i, static_cast<Index>(j)) = y[static_cast<std::size_t>(t_begin - 1 + i)];
    }
    return Y;
}

std::vector<double> counterfactual(const FitResult& fit, const MixedPanel& panel, int t_begin,
                                   int t_end) {
    const VectorXd v = aligned_outcomes(fit, panel, t_begin, t_end) * fit.weights;
    return {v.data(), v.data() + v.size()};
}

EffectSeries effects(const FitResult& fit, const MixedPanel& panel) {
    if (panel.T1 < 1) throw DomainError("post-treatment period empty");
    EffectSeries es;
    es.counterfactual = counterfactual(fit, panel, panel.T0 + 1, panel.horizon());
    double sum = 0.0;
    for (int t = panel.T0 + 1; t <= panel.horizon(); ++t) {
        const double y = panel.treated.values[static_cast<std::size_t>(t - 1)];
        const double e = y - es.counterfactual[static_cast<std::size_t>(t - panel.T0 - 1)];
        es.times.push_back(t);
        es.observed.push_back(y);
        es.effects.push_back(e);
        sum += e;
    }
    es.ate = sum / static_cast<double>(es.effects.size());
    return es;
}

std::pair<FitResult, EffectSeries> placebo_in_time(const MixedPanel& panel, int pseudo_T0,
                                                   const EstimationConfig& config) {
    if (pseudo_T0 < 1 || pseudo_T0 >= panel.T0)
        throw DomainError("pseudo_T0 must lie in [1, T0) = [1, " + std::to_string(panel.T0) + ")");
    const MixedPanel cut = truncate_panel(panel, panel.T0, pseudo_T0);
    FitResult f = fit(cut, config);
    EffectSeries e = effects(f, cut);
    return {std::move(f), std::move(e)};
}

}  // namespace mfscm
