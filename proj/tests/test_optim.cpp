#include "doctest.h"
#include "helpers.hpp"

#include "mfscm/error.hpp"
#include "mfscm/optim.hpp"

using namespace mfscm;
using doctest::Approx;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double ls_objective(const VectorXd& z1, const MatrixXd& Z, const VectorXd& w, double n) {
    return (z1 - Z * w).squaredNorm() / n;
}

bool in_simplex(const VectorXd& w) {
    return w.minCoeff() >= -1e-10 && std::abs(w.sum() - 1.0) <= 1e-8;
}

// Design with a fixed same-frequency column, a fixed low-frequency column and one
// midas donor (m = 3), T0 rows of outcomes plus Q covariate blocks.
AlignedDesign three_unit_design(std::mt19937_64& rng, int T0, int Q) {
    AlignedDesign d;
    d.T0 = T0;
    d.Q = Q;
    d.covariate_scale = 1.0 / std::sqrt(static_cast<double>(T0));
    const Eigen::Index rows = static_cast<Eigen::Index>(Q + 1) * T0;
    d.z1 = testutil::randn(rows, 1, rng);
    for (int j = 0; j < 2; ++j) {
        DesignColumn c;
        c.id = "f" + std::to_string(j);
        c.donor_index = static_cast<std::size_t>(j);
        c.fixed = testutil::randn(rows, 1, rng);
        d.donors.push_back(c);
    }
    DesignColumn h;
    h.id = "h";
    h.donor_index = 2;
    h.midas = true;
    h.high = testutil::randn(T0, 3, rng);
    h.cov_rows = testutil::randn(rows - T0, 1, rng);
    d.donors.push_back(h);
    return d;
}

// Objective of (w, B) evaluated directly on the design, B the per-lag weights.
double direct_objective(const AlignedDesign& d, const Eigen::Vector3d& w, const Eigen::Vector3d& B) {
    VectorXd fit = w(0) * d.donors[0].fixed + w(1) * d.donors[1].fixed;
    const auto& h = d.donors[2];
    fit.head(d.T0) += w(2) * (h.high * B);
    fit.tail(d.rows() - d.T0) += w(2) * B.sum() * h.cov_rows;
    return (d.z1 - fit).squaredNorm() / d.T0;
}

}  // namespace

TEST_CASE("project_simplex examples") {
    CHECK(project_simplex(Eigen::Vector2d(0.5, 0.5)).isApprox(Eigen::Vector2d(0.5, 0.5)));
    CHECK(project_simplex(Eigen::Vector2d(2, 0)).isApprox(Eigen::Vector2d(1, 0)));
    CHECK(project_simplex(Eigen::Vector3d(0.6, 0.6, 0.6)).isApprox(Eigen::Vector3d::Constant(1.0 / 3)));
}

TEST_CASE("project_simplex satisfies the projection inequality") {
    std::mt19937_64 rng(1);
    for (int rep = 0; rep < 200; ++rep) {
        const int n = 2 + rep % 7;
        const VectorXd v = 2.0 * testutil::randn(n, 1, rng);
        const VectorXd x = project_simplex(v);
        CHECK(in_simplex(x));
        // (v - x)'(e_i - x) <= 0 for every vertex e_i.
        for (int i = 0; i < n; ++i) {
            VectorXd e = VectorXd::Zero(n);
            e(i) = 1.0;
            CHECK((v - x).dot(e - x) <= 1e-12);
        }
    }
}

TEST_CASE("polyhedral projector agrees with the simplex projection and is optimal") {
    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 50; ++rep) {
        const int n = 2 + rep % 6;
        const VectorXd y = 3.0 * testutil::randn(n, 1, rng);
        PolyhedralProjector simplex(VectorXd::Ones(n), MatrixXd::Identity(n, n));
        CHECK((simplex.project(y) - project_simplex(y)).cwiseAbs().maxCoeff() < 1e-10);
    }
    // General {e'x = 1, Gx >= 0}: check feasibility and the variational inequality
    // against other feasible points.
    const LagPolyBasis basis{3};
    const MatrixXd lag = basis.lag_matrix(3);
    MatrixXd G = MatrixXd::Zero(4, 4);
    G(0, 0) = 1.0;
    G.block(1, 1, 3, 3) = lag;
    VectorXd e(4);
    e << 1.0, lag.colwise().sum().transpose();
    PolyhedralProjector proj(e, G);
    std::vector<VectorXd> feasible;
    for (int rep = 0; rep < 100; ++rep) feasible.push_back(proj.project(3.0 * testutil::randn(4, 1, rng)));
    for (int rep = 0; rep < 100; ++rep) {
        const VectorXd y = 3.0 * testutil::randn(4, 1, rng);
        const VectorXd x = proj.project(y);
        CHECK(std::abs(e.dot(x) - 1.0) < 1e-10);
        CHECK((G * x).minCoeff() >= -1e-10);
        for (const auto& z : feasible) CHECK((y - x).dot(z - x) <= 1e-9);
    }
}

TEST_CASE("solve_simplex_ls vertex and grid oracle") {
    std::mt19937_64 rng(3);
    const MatrixXd Z = testutil::randn(30, 3, rng);
    auto s = solve_simplex_ls(Z.col(1), Z);
    CHECK(s.w.isApprox(Eigen::Vector3d(0, 1, 0), 1e-8));
    CHECK(s.objective < 1e-14);

    for (int rep = 0; rep < 20; ++rep) {
        const MatrixXd A = testutil::randn(25, 3, rng);
        const VectorXd z = testutil::randn(25, 1, rng);
        const auto sol = solve_simplex_ls(z, A);
        CHECK(in_simplex(sol.w));
        CHECK(sol.objective == Approx(ls_objective(z, A, sol.w, 25)).epsilon(1e-12));
        const double grid = testutil::simplex3_grid_min(
            [&](const Eigen::Vector3d& w) { return ls_objective(z, A, w, 25); }, 1e-3);
        CHECK(sol.objective <= grid + 1e-12);
        CHECK(grid - sol.objective <= 1e-6);
    }
}

TEST_CASE("solve_simplex_ls with duplicate columns") {
    std::mt19937_64 rng(4);
    MatrixXd Z = testutil::randn(20, 3, rng);
    Z.col(2) = Z.col(1);
    const VectorXd z = testutil::randn(20, 1, rng);
    const auto s = solve_simplex_ls(z, Z);
    CHECK(s.non_unique);
    const MatrixXd Z2 = Z.leftCols(2);
    const auto s2 = solve_simplex_ls(z, Z2);
    CHECK(s.objective == Approx(s2.objective).epsilon(1e-10));
}

TEST_CASE("solve_simplex_ls objective trace is monotone on the general solver") {
    std::mt19937_64 rng(5);
    const MatrixXd Z = testutil::randn(15, 12, rng);
    const VectorXd z = testutil::randn(15, 1, rng);
    const SimplexQP qp = make_simplex_ls_problem(z, Z, 15.0);
    const auto s = solve_qp(qp, {}, true);
    REQUIRE(!s.trace.empty());
    for (std::size_t i = 1; i < s.trace.size(); ++i) CHECK(s.trace[i] <= s.trace[i - 1] + 1e-14);
    CHECK(s.status == SolveStatus::Converged);
    CHECK(s.objective == Approx(solve_simplex_ls(z, Z).objective).epsilon(1e-9));
}

TEST_CASE("solve_simplex_ls scale equivariance") {
    std::mt19937_64 rng(6);
    const MatrixXd Z = testutil::randn(40, 5, rng);
    const VectorXd z = testutil::randn(40, 1, rng);
    const auto a = solve_simplex_ls(z, Z);
    const auto b = solve_simplex_ls(3.0 * z, 3.0 * Z);
    CHECK(b.objective == Approx(9.0 * a.objective).epsilon(1e-10));
    CHECK((a.w - b.w).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("solve_ols examples") {
    std::mt19937_64 rng(7);
    const MatrixXd Z = testutil::randn(50, 2, rng);
    const VectorXd exact = solve_ols(Z * Eigen::Vector2d(0.3, 0.7), Z);
    CHECK(exact(0) == Approx(0.3));
    CHECK(exact(1) == Approx(0.7));

    MatrixXd Zo = MatrixXd::Zero(4, 2);
    Zo(0, 0) = 1;
    Zo(1, 1) = 1;
    const VectorXd perp = solve_ols(Eigen::Vector4d(0, 0, 1, 1), Zo);
    CHECK(perp.cwiseAbs().maxCoeff() < 1e-14);

    const VectorXd z = testutil::randn(50, 1, rng);
    const VectorXd b = solve_ols(z, Z);
    CHECK((Z.transpose() * (z - Z * b)).cwiseAbs().maxCoeff() < 1e-8);

    MatrixXd dup(50, 2);
    dup.col(0) = Z.col(0);
    dup.col(1) = Z.col(0);
    CHECK_THROWS_AS(solve_ols(z, dup), IllPosedError);
}

TEST_CASE("project_metric examples and grid oracle") {
    std::mt19937_64 rng(8);
    const MatrixXd R = testutil::randn(3, 3, rng);
    const MatrixXd M = R.transpose() * R + 0.1 * MatrixXd::Identity(3, 3);
    const Eigen::Vector3d inside(0.2, 0.5, 0.3);
    CHECK((project_metric(inside, M) - inside).cwiseAbs().maxCoeff() < 1e-8);

    const Eigen::Vector3d t(1.4, -0.3, 0.2);
    CHECK((project_metric(t, MatrixXd::Identity(3, 3)) - project_simplex(t)).cwiseAbs().maxCoeff() <
          1e-8);

    for (int rep = 0; rep < 10; ++rep) {
        const MatrixXd Rr = testutil::randn(3, 3, rng);
        const MatrixXd Mr = Rr.transpose() * Rr + 0.05 * MatrixXd::Identity(3, 3);
        const Eigen::Vector3d tr = 1.5 * testutil::randn(3, 1, rng);
        auto q = [&](const Eigen::Vector3d& w) { return (tr - w).dot(Mr * (tr - w)); };
        const Eigen::Vector3d x = project_metric(tr, Mr);
        CHECK(in_simplex(x));
        const double grid = testutil::simplex3_grid_min(q, 1e-3);
        CHECK(q(x) <= grid + 1e-12);
        CHECK(grid - q(x) <= 1e-5);
    }
    MatrixXd asym = M;
    asym(0, 1) += 1.0;
    CHECK_THROWS_AS(project_metric(t, asym), DomainError);
}

TEST_CASE("lift without midas donors is the plain simplex problem") {
    std::mt19937_64 rng(9);
    AlignedDesign d = three_unit_design(rng, 30, 1);
    d.donors.pop_back();
    const SimplexQP qp = build_lifted_problem(d, LagPolyBasis{3}, true);
    CHECK(qp.dim() == 2);
    MatrixXd Z(d.rows(), 2);
    Z << d.donors[0].fixed, d.donors[1].fixed;
    const auto a = solve_joint(qp);
    const auto b = solve_simplex_ls(d.z1, Z, {}, 30);
    CHECK(a.objective == Approx(b.objective).epsilon(1e-10));
    CHECK((a.w - b.w).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("lift with a constant basis equals the uniform-MIDAS fixed column") {
    std::mt19937_64 rng(10);
    const AlignedDesign d = three_unit_design(rng, 30, 1);
    const auto a = solve_joint(build_lifted_problem(d, LagPolyBasis{1}, true));
    CHECK(a.x.size() == 3);
    MatrixXd Z(d.rows(), 3);
    Z.col(0) = d.donors[0].fixed;
    Z.col(1) = d.donors[1].fixed;
    Z.col(2).head(30) = d.donors[2].high.rowwise().mean();
    Z.col(2).tail(30) = d.donors[2].cov_rows;
    const auto b = solve_simplex_ls(d.z1, Z, {}, 30);
    CHECK(a.objective == Approx(b.objective).epsilon(1e-9));
    CHECK((a.w - b.w).cwiseAbs().maxCoeff() < 1e-6);
    // eta = w * zeta with zeta = 1/m on the constant function.
    CHECK(a.x(2) == Approx(a.w(2) / 3.0).epsilon(1e-9));
}

TEST_CASE("lifted solution dominates a (w, B) grid with one midas donor") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 5; ++rep) {
        AlignedDesign d = three_unit_design(rng, 25, 0);
        d.donors.erase(d.donors.begin() + 1);
        d.donors[0].fixed.conservativeResize(25);
        d.donors[1].cov_rows.resize(0);
        d.z1.conservativeResize(25);
        const SimplexQP qp = build_lifted_problem(d, LagPolyBasis{3}, true);
        const auto s = solve_joint(qp);
        const auto& h = d.donors[1];
        double best = std::numeric_limits<double>::infinity();
        for (int a = 0; a <= 100; ++a) {
            const double w = a / 100.0;
            testutil::simplex3_grid(1e-2, [&](const Eigen::Vector3d& B) {
                const VectorXd fit = (1 - w) * d.donors[0].fixed + w * (h.high * B);
                best = std::min(best, (d.z1 - fit).squaredNorm() / 25.0);
            });
        }
        CHECK(s.objective <= best + 1e-10);
        REQUIRE(s.midas.size() == 1);
        if (s.w(1) > 1e-6) {
            CHECK(s.midas[0].weights.sum() == Approx(1.0).epsilon(1e-8));
            CHECK(s.midas[0].weights.minCoeff() >= -1e-9);
        }
    }
}

TEST_CASE("lifted Hessian is symmetric PSD and objective matches direct evaluation") {
    std::mt19937_64 rng(12);
    const AlignedDesign d = three_unit_design(rng, 20, 2);
    const SimplexQP qp = build_lifted_problem(d, LagPolyBasis{3}, true);
    CHECK((qp.hessian - qp.hessian.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(qp.hessian);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);

    const Eigen::Vector3d w(0.2, 0.3, 0.5), B(0.5, 0.3, 0.2);
    const MatrixXd lag = LagPolyBasis{3}.lag_matrix(3);
    const VectorXd zeta = lag.fullPivLu().solve(B);
    VectorXd x(5);
    x << w(0), w(1), w(2) * zeta;
    CHECK(qp.objective(x) == Approx(direct_objective(d, w, B)).epsilon(1e-10));
}

TEST_CASE("noiseless joint recovery") {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 5; ++rep) {
        AlignedDesign d = three_unit_design(rng, 60, 1);
        const Eigen::Vector3d w0(0.3, 0.2, 0.5), B0(0.5, 1.0 / 3, 1.0 / 6);
        VectorXd z = w0(0) * d.donors[0].fixed + w0(1) * d.donors[1].fixed;
        z.head(60) += w0(2) * (d.donors[2].high * B0);
        z.tail(60) += w0(2) * d.donors[2].cov_rows;
        d.z1 = z;
        const auto s = solve_joint(build_lifted_problem(d, LagPolyBasis{3}, true));
        CHECK(s.objective < 1e-12);
        CHECK((s.w - w0).cwiseAbs().maxCoeff() < 1e-4);
        CHECK((s.midas[0].weights - B0).cwiseAbs().maxCoeff() < 1e-3);
    }
}

TEST_CASE("midas donor with zero weight is degenerate with uniform weights") {
    std::mt19937_64 rng(14);
    AlignedDesign d = three_unit_design(rng, 40, 1);
    d.z1 = d.donors[0].fixed;
    d.donors[2].high *= 1e-3;
    d.donors[2].high.array() += 50.0;
    const auto s = solve_joint(build_lifted_problem(d, LagPolyBasis{3}, true));
    CHECK(s.w(0) == Approx(1.0).epsilon(1e-8));
    REQUIRE(s.degenerate_units.size() == 1);
    CHECK(s.degenerate_units[0] == 2);
    CHECK((s.midas[0].weights.array() - 1.0 / 3).abs().maxCoeff() < 1e-12);
}

TEST_CASE("identical donors report non-unique weights") {
    std::mt19937_64 rng(15);
    AlignedDesign d = three_unit_design(rng, 30, 1);
    d.donors.pop_back();
    d.donors[1].fixed = d.donors[0].fixed;
    const auto s = solve_joint(build_lifted_problem(d, LagPolyBasis{3}, true));
    CHECK(s.non_unique);
    const double single = (d.z1 - d.donors[0].fixed).squaredNorm() / 30.0;
    CHECK(s.objective == Approx(single).epsilon(1e-10));
}
