#pragma once

#include "mfscm/config.hpp"
#include "mfscm/freq_align.hpp"
#include "mfscm/optim.hpp"
#include "mfscm/panel.hpp"

#include <Eigen/Dense>

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace mfscm {

struct FitResult {
    std::vector<std::string> donor_ids;  ///< panel donor order
    Eigen::VectorXd weights;             ///< per donor, 0 for donors a variant excludes
    std::map<std::string, MidasWeights> midas;                ///< high-frequency donors
    std::map<std::string, ReconstructionModel> recon_models;  ///< low-frequency donors
    double pre_mse = 0.0;    ///< outcome rows only
    double objective = 0.0;  ///< full stacked objective
    double kkt_residual = 0.0;
    int iterations = 0;
    SolveStatus status = SolveStatus::Converged;
    std::vector<std::string> degenerate_units;
    bool non_unique = false;
    std::vector<Diagnostic> diagnostics;
    EstimationConfig config;
    int T0 = 0;

    [[nodiscard]] double weight(const std::string& id) const;
};

struct EffectSeries {
    std::vector<int> times;  ///< T0+1..T
    std::vector<double> observed;
    std::vector<double> counterfactual;
    std::vector<double> effects;
    double ate = 0.0;
};

/// Pre-treatment fit: reconstruct low-frequency donors on t <= T0, solve the
/// joint weight/MIDAS problem on stacked outcomes and covariates.
FitResult fit(const MixedPanel& panel, const EstimationConfig& config = {});

/// Aligned donor outcomes Y~^N_{j,t} for t = t_begin..t_end (rows) and all
/// donors in panel order (columns), using the fitted MIDAS weights and frozen
/// reconstruction models.
Eigen::MatrixXd aligned_outcomes(const FitResult& fit, const MixedPanel& panel, int t_begin,
                                 int t_end);

/// Yhat^N_{1,t} = sum_j w_j Y~^N_{j,t} for t = t_begin..t_end.
std::vector<double> counterfactual(const FitResult& fit, const MixedPanel& panel, int t_begin,
                                   int t_end);

EffectSeries effects(const FitResult& fit, const MixedPanel& panel);

/// Refit on [1, pseudo_T0] and report pseudo-effects on (pseudo_T0, T0].
std::pair<FitResult, EffectSeries> placebo_in_time(const MixedPanel& panel, int pseudo_T0,
                                                   const EstimationConfig& config = {});

/// The stacked design the estimator hands to the solver (exposed for tests).
AlignedDesign build_design(const MixedPanel& panel, const EstimationConfig& config,
                           const std::map<std::string, ReconstructionModel>& recon);

/// Fits the low-frequency reconstruction models on t <= T0.
std::map<std::string, ReconstructionModel> fit_reconstructions(const MixedPanel& panel,
                                                               const EstimationConfig& config);

}  // namespace mfscm
