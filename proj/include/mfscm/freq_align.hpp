#pragma once

#include "mfscm/config.hpp"
#include "mfscm/panel.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace mfscm {

/// Shifted Legendre polynomial of degree ell-1 evaluated at x in [0, 1].
/// ell = 1 is the constant 1.
double basis_eval(int ell, double x);

/// Fixed shifted-Legendre dictionary with `degree` functions.
struct LagPolyBasis {
    int degree = 3;

    [[nodiscard]] double eval(int ell, double x) const;
    /// m x degree matrix with entry (k-1, ell-1) = w_ell((k-1)/m).
    [[nodiscard]] Eigen::MatrixXd lag_matrix(int m) const;
};

/// Per-lag aggregation weights for one high-frequency donor.
struct MidasWeights {
    std::string unit_id;
    int m = 0;
    Eigen::VectorXd zeta;     ///< dictionary coefficients, length L
    Eigen::VectorXd weights;  ///< B(k), k = 1..m
};

/// weights[k] = sum_ell zeta[ell] * w_ell((k-1)/m). No normalization is applied.
MidasWeights build_midas_weights(const Eigen::VectorXd& zeta, int m, const LagPolyBasis& basis,
                                 std::string unit_id = {});

/// Equal weights 1/m expressed in the dictionary (constant term only).
MidasWeights uniform_midas_weights(int m, const LagPolyBasis& basis, std::string unit_id = {});

/// Baseline-frequency aggregate Ybar_t = sum_k B(k) Y_{t-(k-1)/m}, t = 1..T.
std::vector<double> align_high_freq(const UnitSeries& series, const MidasWeights& w);

/// Distributed-lag reconstruction model for a low-frequency donor.
struct ReconstructionModel {
    std::string unit_id;
    LowFreqMode mode = LowFreqMode::Aggregate;
    double alpha = 0.0;
    Eigen::MatrixXd beta;         ///< (P+1) x Q, row p multiplies X_{t-p}
    Eigen::VectorXd agg_weights;  ///< W_s, s = 1..m~ (aggregate mode)
    int observations = 0;         ///< low-frequency observations used
    int iterations = 0;           ///< ALS sweeps (aggregate mode)
    bool converged = true;
    bool backfilled = false;       ///< lags before t = 1 were replaced by X_1
    bool pooled = false;
    double objective = 0.0;        ///< mean squared residual on the fit sample
    double r_squared = 0.0;
    std::vector<double> objective_trace;  ///< per-sweep objective (aggregate mode)

    [[nodiscard]] int lag_order() const { return static_cast<int>(beta.rows()) - 1; }
};

/// OLS of point-sampled observations with t <= fit_horizon on an intercept and
/// covariate lags 0..P. fit_horizon <= 0 means every observation.
ReconstructionModel fit_low_freq_point_sample(const UnitSeries& series, int P,
                                              int fit_horizon = 0);

/// Alternating least squares for the aggregated model, using cycles that end
/// at or before fit_horizon. Objective is nonincreasing across sweeps.
ReconstructionModel fit_low_freq_aggregate(const UnitSeries& series, int P,
                                           const AlsOptions& options = {},
                                           int fit_horizon = 0);

/// One model shared by several donors with identical frequency class.
ReconstructionModel fit_low_freq_pooled(const std::vector<const UnitSeries*>& units, int P,
                                        const AlsOptions& options = {}, int fit_horizon = 0);

/// Yhat_t = alpha + sum_p beta_p' X_{t-p}, t = 1..T.
std::vector<double> reconstruct_baseline(const ReconstructionModel& model,
                                         const UnitSeries& series);

/// Re-aggregates a baseline series with the model's weights at each
/// observation time of `series` (aggregate mode).
std::vector<double> reaggregate(const ReconstructionModel& model, const UnitSeries& series,
                                const std::vector<double>& baseline);

}  // namespace mfscm
