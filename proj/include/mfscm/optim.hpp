#pragma once

#include "mfscm/config.hpp"
#include "mfscm/freq_align.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

namespace mfscm {

/// One donor's contribution to the stacked pre-treatment design.
///
/// Fixed donors (same frequency, reconstructed low frequency, or high
/// frequency with frozen MIDAS weights) carry a single column of length T_z.
/// High-frequency donors with free MIDAS weights carry their T0 x m block of
/// sub-period outcomes plus their (already scaled) covariate rows.
struct DesignColumn {
    std::string id;
    std::size_t donor_index = 0;  ///< position in the panel's donor list
    bool midas = false;
    Eigen::VectorXd fixed;     ///< length T_z (fixed donors)
    Eigen::MatrixXd high;      ///< T0 x m, (t-1, k-1) -> Y_{t-(k-1)/m} (midas donors)
    Eigen::VectorXd cov_rows;  ///< length Q*T0 (midas donors)
};

/// Stacked outcomes-over-covariates design at baseline frequency.
///
/// Rows 0..T0-1 hold outcomes; rows T0..T_z-1 hold covariate q at period t in
/// block order (q major), pre-multiplied by covariate_scale.
struct AlignedDesign {
    Eigen::VectorXd z1;
    std::vector<DesignColumn> donors;
    int T0 = 0;
    int Q = 0;
    double covariate_scale = 1.0;

    [[nodiscard]] Eigen::Index rows() const { return z1.size(); }
};

/// Variables belonging to one donor inside a SimplexQP.
struct VariableBlock {
    std::size_t donor = 0;  ///< index into AlignedDesign::donors
    Eigen::Index offset = 0;
    Eigen::Index size = 1;
    bool midas = false;
    Eigen::MatrixXd lag_matrix;  ///< m x L dictionary values (midas blocks)
};

/// Convex QP: minimize x'Hx - 2 g'x + c subject to e'x = 1 and G x >= 0.
struct SimplexQP {
    Eigen::MatrixXd hessian;
    Eigen::VectorXd linear;
    double constant = 0.0;
    Eigen::VectorXd sum_coeffs;
    Eigen::MatrixXd ineq;
    bool plain_simplex = true;  ///< e = 1 and G = I: the probability simplex
    std::vector<VariableBlock> blocks;
    Eigen::VectorXd start;
    std::vector<std::pair<std::size_t, std::size_t>> duplicate_donors;

    [[nodiscard]] Eigen::Index dim() const { return hessian.rows(); }
    [[nodiscard]] double objective(const Eigen::VectorXd& x) const;
};

enum class SolveStatus { Converged, MaxIter };

struct JointSolution {
    Eigen::VectorXd w;                 ///< unit weight per design donor
    std::vector<MidasWeights> midas;   ///< one entry per midas donor, design order
    std::vector<std::size_t> midas_donor;  ///< design index of each midas entry
    Eigen::VectorXd x;                 ///< raw lifted variables
    double objective = 0.0;
    double kkt_residual = 0.0;
    int iterations = 0;
    SolveStatus status = SolveStatus::Converged;
    std::vector<std::size_t> degenerate_units;  ///< midas donors with w_j <= 1e-8
    bool non_unique = false;                    ///< duplicate donor columns detected
    std::vector<double> trace;                  ///< accepted objectives (if requested)
};

/// Euclidean projection onto the probability simplex.
Eigen::VectorXd project_simplex(const Eigen::VectorXd& v);

/// Euclidean projection onto {x : e'x = 1, G x >= 0} by a dual active-set
/// (Goldfarb-Idnani) pass with identity Hessian.
class PolyhedralProjector {
public:
    PolyhedralProjector(Eigen::VectorXd sum_coeffs, Eigen::MatrixXd ineq);
    [[nodiscard]] Eigen::VectorXd project(const Eigen::VectorXd& y) const;

private:
    Eigen::VectorXd e_;
    Eigen::MatrixXd G_;
};

/// Least-squares QP (1/normalizer)||z1 - Z w||^2 over the simplex.
SimplexQP make_simplex_ls_problem(const Eigen::VectorXd& z1, const Eigen::MatrixXd& Z,
                                  double normalizer);

/// Projected gradient with Barzilai-Borwein steps and backtracking, followed
/// by an exact solve on the identified face. Every accepted step lowers the
/// objective.
JointSolution solve_qp(const SimplexQP& qp, const SolverOptions& options = {},
                       bool record_trace = false);

/// argmin over the simplex of (1/T0)||z1 - Z w||^2; T0 <= 0 uses z1.size().
JointSolution solve_simplex_ls(const Eigen::VectorXd& z1, const Eigen::MatrixXd& Z,
                               const SolverOptions& options = {}, int T0 = 0);

/// Unconstrained least squares; IllPosedError if Z'Z has condition number >= 1e12.
Eigen::VectorXd solve_ols(const Eigen::VectorXd& z1, const Eigen::MatrixXd& Z);

/// argmin over the simplex of (target - x)' M (target - x).
Eigen::VectorXd project_metric(const Eigen::VectorXd& target, const Eigen::MatrixXd& M,
                               const SolverOptions& options = {});

/// Lift eta_j = w_j * zeta_j for midas donors so the joint weight/MIDAS
/// problem becomes a convex QP in (w_fixed, eta).
SimplexQP build_lifted_problem(const AlignedDesign& design, const LagPolyBasis& basis,
                               bool nonneg_midas);

/// Solves a lifted problem and maps eta back to (w, zeta); midas donors with
/// w_j <= 1e-8 are reported degenerate with uniform MIDAS weights.
JointSolution solve_joint(const SimplexQP& qp, const SolverOptions& options = {},
                          bool record_trace = false);

/// Design matrix of the lifted problem (T_z x dim), column order as in the QP.
Eigen::MatrixXd lifted_matrix(const AlignedDesign& design, const LagPolyBasis& basis);

}  // namespace mfscm
