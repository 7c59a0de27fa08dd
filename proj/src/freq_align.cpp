#include "mfscm/freq_align.hpp"

#include "mfscm/error.hpp"
#include "mfscm/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mfscm {

double basis_eval(int ell, double x) {
    if (!(x >= 0.0 && x <= 1.0)) {
        throw DomainError("basis argument must lie in [0,1]");
    }
    if (ell < 1) throw DomainError("basis index must be >= 1");
    const double u = 2.0 * x - 1.0;
    double prev = 1.0;
    if (ell == 1) return prev;
    double cur = u;
    for (int n = 1; n < ell - 1; ++n) {
        const double next = ((2.0 * n + 1.0) * u * cur - n * prev) / (n + 1.0);
        prev = cur;
        cur = next;
    }
    return cur;
}

double LagPolyBasis::eval(int ell, double x) const {
    if (ell > degree) throw DomainError("basis index exceeds degree");
    return basis_eval(ell, x);
}

Eigen::MatrixXd LagPolyBasis::lag_matrix(int m) const {
    if (m < 1) throw DomainError("MIDAS window m must be >= 1");
    Eigen::MatrixXd out(m, degree);
    for (int k = 1; k <= m; ++k) {
        const double x = static_cast<double>(k - 1) / m;
        for (int ell = 1; ell <= degree; ++ell) out(k - 1, ell - 1) = basis_eval(ell, x);
    }
    return out;
}

MidasWeights build_midas_weights(const Eigen::VectorXd& zeta, int m, const LagPolyBasis& basis,
                                 std::string unit_id) {
    if (m < 1) throw DomainError("MIDAS window m must be >= 1");
    if (zeta.size() != basis.degree) {
        throw DomainError("zeta length must equal the basis degree");
    }
    MidasWeights w;
    w.unit_id = std::move(unit_id);
    w.m = m;
    w.zeta = zeta;
    w.weights = basis.lag_matrix(m) * zeta;
    return w;
}

MidasWeights uniform_midas_weights(int m, const LagPolyBasis& basis, std::string unit_id) {
    Eigen::VectorXd zeta = Eigen::VectorXd::Zero(basis.degree);
    zeta(0) = 1.0 / m;
    return build_midas_weights(zeta, m, basis, std::move(unit_id));
}

std::vector<double> align_high_freq(const UnitSeries& series, const MidasWeights& w) {
    if (!series.freq.is_higher()) throw DomainError("align_high_freq needs a higher-frequency unit");
    if (series.freq.ratio != w.m || w.weights.size() != w.m) {
        throw DomainError("MIDAS window does not match unit " + series.id);
    }
    const int T = series.horizon();
    std::vector<double> out(static_cast<std::size_t>(T));
    for (int t = 1; t <= T; ++t) {
        double acc = 0.0;
        for (int k = 1; k <= w.m; ++k) acc += w.weights(k - 1) * series.high(t, k);
        out[static_cast<std::size_t>(t - 1)] = acc;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Low-frequency reconstruction

namespace {

/// Covariate lag vector [X_{t-p, q}] ordered (p major, q minor), t-p < 1 backfilled.
Eigen::VectorXd lag_features(const UnitSeries& u, int t, int P, bool& backfilled) {
    const auto Q = u.covariates.rows();
    Eigen::VectorXd f((P + 1) * Q);
    for (int p = 0; p <= P; ++p) {
        int s = t - p;
        if (s < 1) {
            s = 1;
            backfilled = true;
        }
        f.segment(p * Q, Q) = u.covariates.col(s - 1);
    }
    return f;
}

void check_inputs(const std::vector<const UnitSeries*>& units, int P) {
    if (units.empty()) throw DomainError("reconstruction needs at least one unit");
    if (P < 0) throw DomainError("lag order P must be >= 0");
    const auto& f0 = units.front()->freq;
    for (const auto* u : units) {
        if (!u->freq.is_lower()) throw DomainError("unit " + u->id + " is not low-frequency");
        if (u->freq.ratio != f0.ratio || u->freq.mode != f0.mode || u->freq.offset != f0.offset) {
            throw DomainError("pooled units must share a frequency class");
        }
        if (u->covariates.rows() == 0) {
            throw DomainError("unit " + u->id + " has no covariates to reconstruct from");
        }
        if (u->obs_times.size() != u->values.size()) {
            throw DomainError("unit " + u->id + " has inconsistent observations");
        }
    }
}

std::string unit_label(const std::vector<const UnitSeries*>& units) {
    if (units.size() == 1) return units.front()->id;
    std::string s = "pooled(";
    for (std::size_t i = 0; i < units.size(); ++i) {
        if (i) s += ",";
        s += units[i]->id;
    }
    return s + ")";
}

/// Least squares with an explicit rank check.
Eigen::VectorXd full_rank_ls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                             const std::string& what) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    qr.setThreshold(1e-10);
    if (qr.rank() < A.cols()) {
        throw IllPosedError(what + ": rank-deficient design (rank " + std::to_string(qr.rank()) +
                            " < " + std::to_string(A.cols()) + ")");
    }
    return qr.solve(b);
}

double r_squared(const Eigen::VectorXd& y, double ssr) {
    const double mean = y.mean();
    const double sst = (y.array() - mean).square().sum();
    return sst > 0 ? 1.0 - ssr / sst : (ssr <= 1e-24 ? 1.0 : 0.0);
}

void unpack_coefficients(ReconstructionModel& m, const Eigen::VectorXd& coef, int P,
                         Eigen::Index Q) {
    m.alpha = coef(0);
    m.beta.resize(P + 1, Q);
    for (int p = 0; p <= P; ++p) {
        for (Eigen::Index q = 0; q < Q; ++q) m.beta(p, q) = coef(1 + p * Q + q);
    }
}

ReconstructionModel fit_point_sample_core(const std::vector<const UnitSeries*>& units, int P,
                                          int fit_horizon) {
    check_inputs(units, P);
    const auto Q = units.front()->covariates.rows();
    const std::string label = unit_label(units);
    std::vector<Eigen::VectorXd> rows;
    std::vector<double> ys;
    bool backfilled = false;
    for (const auto* u : units) {
        const int limit = fit_horizon > 0 ? fit_horizon : u->horizon();
        for (std::size_t i = 0; i < u->obs_times.size(); ++i) {
            const int t = u->obs_times[i];
            if (t > limit) continue;
            rows.push_back(lag_features(*u, t, P, backfilled));
            ys.push_back(u->values[i]);
        }
    }
    const auto n = static_cast<Eigen::Index>(ys.size());
    const Eigen::Index k = 1 + (P + 1) * Q;
    if (n <= k) {
        throw SampleSizeError(label + ": " + std::to_string(n) +
                              " low-frequency observations, need more than " + std::to_string(k));
    }
    Eigen::MatrixXd D(n, k);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        D(i, 0) = 1.0;
        D.row(i).tail(k - 1) = rows[static_cast<std::size_t>(i)].transpose();
        y(i) = ys[static_cast<std::size_t>(i)];
    }
    const Eigen::VectorXd coef = full_rank_ls(D, y, label);
    ReconstructionModel m;
    m.unit_id = label;
    m.mode = LowFreqMode::PointSample;
    unpack_coefficients(m, coef, P, Q);
    m.observations = static_cast<int>(n);
    m.backfilled = backfilled;
    const double ssr = (y - D * coef).squaredNorm();
    m.objective = ssr / static_cast<double>(n);
    m.r_squared = r_squared(y, ssr);
    m.pooled = units.size() > 1;
    return m;
}

/// Weights W minimizing ||r - F W||^2 subject to sum W = 1 (and W >= 0 if asked).
Eigen::VectorXd constrained_weights(const Eigen::MatrixXd& F, const Eigen::VectorXd& r,
                                    bool nonneg, const std::string& label) {
    const auto s = F.cols();
    if (nonneg) {
        const auto sol = solve_simplex_ls(r, F);
        return sol.w;
    }
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(s + 1, s + 1);
    K.topLeftCorner(s, s) = F.transpose() * F;
    K.block(0, s, s, 1).setOnes();
    K.block(s, 0, 1, s).setOnes();
    Eigen::VectorXd rhs(s + 1);
    rhs.head(s) = F.transpose() * r;
    rhs(s) = 1.0;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    lu.setThreshold(1e-12);
    if (lu.rank() < K.cols()) {
        throw IllPosedError(label + ": aggregation-weight subproblem is rank deficient");
    }
    return lu.solve(rhs).head(s);
}

ReconstructionModel fit_aggregate_core(const std::vector<const UnitSeries*>& units, int P,
                                       const AlsOptions& options, int fit_horizon) {
    check_inputs(units, P);
    if (options.max_iter < 1) throw DomainError("ALS max_iter must be >= 1");
    const auto Q = units.front()->covariates.rows();
    const int ms = units.front()->freq.ratio;
    const std::string label = unit_label(units);
    const Eigen::Index k = (P + 1) * Q;

    // Per cycle c: y_c and the lag features of each of its m~ baseline periods.
    std::vector<Eigen::MatrixXd> cycle_features;  // k x m~
    std::vector<double> ys;
    bool backfilled = false;
    for (const auto* u : units) {
        const int limit = fit_horizon > 0 ? fit_horizon : u->horizon();
        for (std::size_t i = 0; i < u->obs_times.size(); ++i) {
            const int t = u->obs_times[i];
            if (t > limit || t < ms) continue;
            Eigen::MatrixXd F(k, ms);
            for (int s = 1; s <= ms; ++s) F.col(s - 1) = lag_features(*u, t - ms + s, P, backfilled);
            cycle_features.push_back(std::move(F));
            ys.push_back(u->values[i]);
        }
    }
    const auto n = static_cast<Eigen::Index>(ys.size());
    if (n < k + ms) {
        throw SampleSizeError(label + ": " + std::to_string(n) +
                              " low-frequency observations, need at least " +
                              std::to_string(k + ms));
    }
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ys.data(), n);

    ReconstructionModel m;
    m.unit_id = label;
    m.mode = LowFreqMode::Aggregate;
    m.observations = static_cast<int>(n);
    m.backfilled = backfilled;
    m.pooled = units.size() > 1;
    m.agg_weights = Eigen::VectorXd::Constant(ms, 1.0 / ms);

    Eigen::VectorXd coef(1 + k);
    Eigen::MatrixXd D(n, 1 + k);
    Eigen::MatrixXd Fw(n, ms);
    const double scale = y.squaredNorm() / static_cast<double>(n);
    double prev = std::numeric_limits<double>::infinity();
    m.converged = false;
    for (int iter = 1; iter <= options.max_iter; ++iter) {
        // (a) coefficients given W
        for (Eigen::Index c = 0; c < n; ++c) {
            D(c, 0) = 1.0;
            D.row(c).tail(k) = (cycle_features[static_cast<std::size_t>(c)] * m.agg_weights).transpose();
        }
        coef = full_rank_ls(D, y, label);
        m.objective_trace.push_back((y - D * coef).squaredNorm() / static_cast<double>(n));

        // (b) W given coefficients
        const Eigen::VectorXd b = coef.tail(k);
        for (Eigen::Index c = 0; c < n; ++c) {
            Fw.row(c) = b.transpose() * cycle_features[static_cast<std::size_t>(c)];
        }
        const Eigen::VectorXd r = y.array() - coef(0);
        m.agg_weights = constrained_weights(Fw, r, options.nonneg_weights, label);
        const double obj = (r - Fw * m.agg_weights).squaredNorm() / static_cast<double>(n);
        m.objective_trace.push_back(obj);
        m.iterations = iter;

        if (obj <= 1e-30 * (1.0 + scale) || (std::isfinite(prev) && prev - obj <= options.tol * prev)) {
            m.converged = true;
            break;
        }
        prev = obj;
    }
    // Coefficients consistent with the final W.
    for (Eigen::Index c = 0; c < n; ++c) {
        D(c, 0) = 1.0;
        D.row(c).tail(k) = (cycle_features[static_cast<std::size_t>(c)] * m.agg_weights).transpose();
    }
    coef = full_rank_ls(D, y, label);
    unpack_coefficients(m, coef, P, Q);
    const double ssr = (y - D * coef).squaredNorm();
    m.objective = ssr / static_cast<double>(n);
    m.objective_trace.push_back(m.objective);
    m.r_squared = r_squared(y, ssr);
    return m;
}

}  // namespace

ReconstructionModel fit_low_freq_point_sample(const UnitSeries& series, int P, int fit_horizon) {
    if (!series.freq.is_lower() || series.freq.mode != LowFreqMode::PointSample) {
        throw DomainError("unit " + series.id + " is not a point-sampled low-frequency unit");
    }
    return fit_point_sample_core({&series}, P, fit_horizon);
}

ReconstructionModel fit_low_freq_aggregate(const UnitSeries& series, int P,
                                           const AlsOptions& options, int fit_horizon) {
    if (!series.freq.is_lower() || series.freq.mode != LowFreqMode::Aggregate) {
        throw DomainError("unit " + series.id + " is not an aggregated low-frequency unit");
    }
    return fit_aggregate_core({&series}, P, options, fit_horizon);
}

ReconstructionModel fit_low_freq_pooled(const std::vector<const UnitSeries*>& units, int P,
                                        const AlsOptions& options, int fit_horizon) {
    check_inputs(units, P);
    return units.front()->freq.mode == LowFreqMode::Aggregate
               ? fit_aggregate_core(units, P, options, fit_horizon)
               : fit_point_sample_core(units, P, fit_horizon);
}

std::vector<double> reconstruct_baseline(const ReconstructionModel& model,
                                         const UnitSeries& series) {
    if (model.unit_id != series.id) {
        throw DomainError("reconstruction model for '" + model.unit_id +
                          "' applied to unit '" + series.id + "'");
    }
    if (model.beta.cols() != series.covariates.rows()) {
        throw DomainError("covariate count mismatch for unit " + series.id);
    }
    const int T = static_cast<int>(series.covariates.cols());
    const int P = model.lag_order();
    std::vector<double> out(static_cast<std::size_t>(T));
    for (int t = 1; t <= T; ++t) {
        double acc = model.alpha;
        for (int p = 0; p <= P; ++p) {
            const int s = std::max(1, t - p);
            acc += model.beta.row(p).dot(series.covariates.col(s - 1));
        }
        out[static_cast<std::size_t>(t - 1)] = acc;
    }
    return out;
}

std::vector<double> reaggregate(const ReconstructionModel& model, const UnitSeries& series,
                                const std::vector<double>& baseline) {
    const int ms = static_cast<int>(model.agg_weights.size());
    std::vector<double> out;
    for (int t : series.obs_times) {
        if (t < ms || t > static_cast<int>(baseline.size())) continue;
        double acc = 0.0;
        for (int s = 1; s <= ms; ++s) {
            acc += model.agg_weights(s - 1) * baseline[static_cast<std::size_t>(t - ms + s - 1)];
        }
        out.push_back(acc);
    }
    return out;
}

}  // namespace mfscm
