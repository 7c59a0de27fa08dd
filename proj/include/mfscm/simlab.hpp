#pragma once

#include "mfscm/config.hpp"
#include "mfscm/estimator.hpp"
#include "mfscm/inference.hpp"
#include "mfscm/panel.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace mfscm {

/// Oracle MIDAS lag-weight shapes used to generate treated outcomes.
struct MidasShape {
    enum class Kind { ExpAlmon, Beta, FrontLoaded };
    Kind kind = Kind::FrontLoaded;
    double zeta1 = 0.0;
    double zeta2 = 0.0;
};

/// Normalized lag weights of length m for a shape.
Eigen::VectorXd oracle_midas_shapes(const MidasShape& shape, int m);

/// How simlab fits low-frequency reconstructions.
enum class SimPooling {
    PerUnit,  ///< per-unit models only; sample-size failures propagate
    Pooled,   ///< one shared model for all low-frequency donors
    Auto,     ///< per-unit, falling back to pooled when a per-unit fit is infeasible
};

struct DgpConfig {
    int J = 20;
    int Q = 3;
    int P = 2;  ///< covariate lags 0..P-1 in the outcome equations
    double sigma = 1.0;
    double sigma_h = 1.0;
    double sigma_u = 0.5;
    int m = 3;        ///< high-frequency ratio
    int m_low = 4;    ///< low-frequency ratio
    int basis_degree = 3;
    MidasShape shape{};
    double effect = 0.0;       ///< constant treatment effect added for t > T0
    bool redraw_phi = false;   ///< redraw unit means per replicate
    std::uint64_t seed = 20240601;

    void validate() const;
    [[nodiscard]] int J1() const { return J / 3; }
    [[nodiscard]] int J2() const { return (2 * J) / 3; }
};

/// Components drawn once per DgpConfig and held fixed across the grid.
struct OracleDraw {
    Eigen::MatrixXd phi;    ///< Q x J unit means of observed covariates
    Eigen::MatrixXd phi_h;  ///< Q x J means of latent high-frequency covariates
    Eigen::MatrixXd beta;   ///< P x Q baseline-frequency slopes
    Eigen::MatrixXd beta_h; ///< P x Q high-frequency slopes
    Eigen::VectorXd omega;  ///< unit weights, J
    std::vector<Eigen::VectorXd> zeta0;  ///< dictionary coefficients per high-frequency donor
    std::vector<Eigen::VectorXd> B0;     ///< lag weights per high-frequency donor
};

OracleDraw draw_oracle(const DgpConfig& dgp);

struct SimPanel {
    MixedPanel panel;
    Eigen::MatrixXd latent;       ///< T x J oracle-aligned donor outcomes Y~^{N,0}
    Eigen::MatrixXd latent_mean;  ///< T x J noise-free part of baseline donors (beta'X)
    Eigen::VectorXd untreated;    ///< T treated untreated path Y^N_1
};

/// Donor index ranges (0-based, half-open) by frequency group.
struct GroupRanges {
    int same_end, lower_end, higher_end;
};
GroupRanges group_ranges(const DgpConfig& dgp);

SimPanel gen_panel(const DgpConfig& dgp, const OracleDraw& oracle, int T0, int T1,
                   std::uint64_t rep_seed);

/// Estimation settings simlab uses for a DGP and variant.
EstimationConfig sim_estimation(const DgpConfig& dgp, Variant variant);

/// fit() honoring a SimPooling policy; `fell_back` reports a pooled refit.
FitResult fit_with_pooling(const MixedPanel& panel, EstimationConfig config, SimPooling pooling,
                           bool* fell_back = nullptr);

struct RiskCell {
    int T0 = 0;
    double denominator = 0.0;
    std::vector<Variant> variants;
    std::vector<double> mean_ratio;  ///< per variant
    std::vector<double> se_ratio;    ///< Monte Carlo standard error per variant
    std::vector<double> min_ratio;
    std::vector<int> completed;      ///< successful training reps per variant
    std::vector<std::string> errors;
    int pooled_fallbacks = 0;
};

struct RiskExperimentResult {
    DgpConfig dgp;
    int T1 = 0;
    int S = 0;
    int M = 0;
    SimPooling pooling = SimPooling::Auto;
    std::vector<RiskCell> cells;
    double runtime_seconds = 0.0;
};

struct RiskOptions {
    std::vector<int> T0_grid{20, 80, 320, 1280};
    int T1 = 100;
    int S = 500;
    int M = 1000;
    std::vector<Variant> variants{Variant::MfScm, Variant::NoMidas, Variant::BaselineOnly};
    SimPooling pooling = SimPooling::Auto;
    unsigned workers = 1;
};

RiskExperimentResult risk_ratio_experiment(const DgpConfig& dgp, const RiskOptions& options);

struct CoverageCell {
    int T0 = 0;
    int T1 = 0;
    int block_length = 0;
    std::vector<double> levels;
    std::vector<double> coverage;
    std::vector<double> mean_length;
    int reps = 0;
    int failures = 0;
    int pooled_fallbacks = 0;
};

struct CoverageExperimentResult {
    DgpConfig dgp;
    int n_boot = 0;
    BlockRule block_rule;
    SimPooling pooling = SimPooling::Auto;
    std::vector<CoverageCell> cells;
    double runtime_seconds = 0.0;
};

struct CoverageOptions {
    std::vector<int> T0_grid{40};
    std::vector<int> T1_grid{20};
    int reps = 1000;
    int n_boot = 1000;
    std::vector<double> levels{0.90, 0.95, 0.99};
    BlockRule block_rule = BlockRule::floor_pow_with_min(0.5, 10);
    Variant variant = Variant::MfScm;
    SimPooling pooling = SimPooling::Auto;
    unsigned workers = 1;
};

CoverageExperimentResult coverage_experiment(const DgpConfig& dgp, const CoverageOptions& options);

const char* to_string(SimPooling p) noexcept;
SimPooling parse_sim_pooling(const std::string& name);

}  // namespace mfscm
