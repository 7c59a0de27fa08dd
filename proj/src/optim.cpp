#include "mfscm/optim.hpp"

#include "mfscm/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <utility>

namespace mfscm {

namespace {

constexpr double kRecoveryThreshold = 1e-8;
constexpr double kInf = std::numeric_limits<double>::infinity();

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Givens rotation zeroing b; returns (c, s) with [c s; -s c] (a, b)' = (h, 0)'.
void givens(double a, double b, double& c, double& s, double& h) {
    h = std::hypot(a, b);
    if (h == 0.0) {
        c = 1.0;
        s = 0.0;
        return;
    }
    c = a / h;
    s = b / h;
}

}  // namespace

double SimplexQP::objective(const VectorXd& x) const {
    return x.dot(hessian * x) - 2.0 * linear.dot(x) + constant;
}

VectorXd project_simplex(const VectorXd& v) {
    if (v.size() == 0) throw DomainError("project_simplex: empty vector");
    std::vector<double> u(v.data(), v.data() + v.size());
    std::sort(u.begin(), u.end(), std::greater<>());
    double cum = 0.0;
    double theta = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        cum += u[j];
        const double t = (cum - 1.0) / static_cast<double>(j + 1);
        if (u[j] - t > 0.0) theta = t;
    }
    return (v.array() - theta).max(0.0).matrix();
}

PolyhedralProjector::PolyhedralProjector(VectorXd sum_coeffs, MatrixXd ineq)
    : e_(std::move(sum_coeffs)), G_(std::move(ineq)) {
    if (G_.cols() != e_.size()) throw DomainError("projector: constraint dimension mismatch");
    if (e_.norm() == 0.0) throw DomainError("projector: zero equality row");
}

// Dual active-set method with H = I. J holds an orthonormal basis whose first
// iq columns span the active normals (N = J R), R is upper triangular.
VectorXd PolyhedralProjector::project(const VectorXd& y) const {
    const Index n = y.size();
    if (n != e_.size()) throw DomainError("projector: point dimension mismatch");
    const Index mi = G_.rows();
    const double eps = std::numeric_limits<double>::epsilon();

    MatrixXd J = MatrixXd::Identity(n, n);
    MatrixXd R = MatrixXd::Zero(n, n + 1);
    VectorXd x = y;
    VectorXd u = VectorXd::Zero(n + 1);
    VectorXd d(n), z(n), r(n + 1);
    std::vector<Index> active;  // -1: equality, otherwise inequality row
    std::vector<char> is_active(static_cast<std::size_t>(mi), 0);
    Index iq = 0;
    double r_norm = 1.0;

    auto step_directions = [&](const VectorXd& np) {
        d.noalias() = J.transpose() * np;
        z.noalias() = J.rightCols(n - iq) * d.tail(n - iq);
        for (Index i = iq - 1; i >= 0; --i) {
            double sum = d(i);
            for (Index j = i + 1; j < iq; ++j) sum -= R(i, j) * r(j);
            r(i) = sum / R(i, i);
        }
    };

    auto add_constraint = [&]() -> bool {
        double c, s, h;
        for (Index j = n - 1; j >= iq + 1; --j) {
            const double cc = d(j - 1);
            const double ss = d(j);
            givens(cc, ss, c, s, h);
            if (h == 0.0) continue;
            d(j) = 0.0;
            d(j - 1) = (cc < 0.0 ? -h : h);
            if (cc < 0.0) {
                c = -c;
                s = -s;
            }
            for (Index k = 0; k < n; ++k) {
                const double a = J(k, j - 1);
                const double b = J(k, j);
                J(k, j - 1) = a * c + b * s;
                J(k, j) = b * c - a * s;
            }
        }
        ++iq;
        R.col(iq - 1).head(iq) = d.head(iq);
        if (std::abs(d(iq - 1)) <= eps * r_norm) return false;
        r_norm = std::max(r_norm, std::abs(d(iq - 1)));
        return true;
    };

    auto delete_constraint = [&](Index pos) {
        const Index row = active[static_cast<std::size_t>(pos)];
        if (row >= 0) is_active[static_cast<std::size_t>(row)] = 0;
        for (Index i = pos; i < iq - 1; ++i) {
            active[static_cast<std::size_t>(i)] = active[static_cast<std::size_t>(i + 1)];
            u(i) = u(i + 1);
            R.col(i).head(n) = R.col(i + 1).head(n);
        }
        active.pop_back();
        u(iq - 1) = u(iq);
        u(iq) = 0.0;
        R.col(iq - 1).setZero();
        --iq;
        double c, s, h;
        for (Index j = pos; j < iq; ++j) {
            const double cc = R(j, j);
            const double ss = R(j + 1, j);
            givens(cc, ss, c, s, h);
            if (h == 0.0) continue;
            R(j + 1, j) = 0.0;
            R(j, j) = (cc < 0.0 ? -h : h);
            if (cc < 0.0) {
                c = -c;
                s = -s;
            }
            for (Index k = j + 1; k < iq; ++k) {
                const double a = R(j, k);
                const double b = R(j + 1, k);
                R(j, k) = a * c + b * s;
                R(j + 1, k) = b * c - a * s;
            }
            for (Index k = 0; k < n; ++k) {
                const double a = J(k, j);
                const double b = J(k, j + 1);
                J(k, j) = a * c + b * s;
                J(k, j + 1) = b * c - a * s;
            }
        }
    };

    // Equality first: it is never dropped.
    {
        step_directions(e_);
        const double zn = z.dot(e_);
        const double t2 = (1.0 - e_.dot(x)) / zn;
        x += t2 * z;
        u(0) = t2;
        active.push_back(-1);
        add_constraint();
    }

    const double scale = 1.0 + x.cwiseAbs().maxCoeff();
    const double feas_tol = 1e-14 * scale;
    const int cap = 20 * static_cast<int>(n + mi) + 100;
    int guard = 0;
    for (;;) {
        Index p = -1;
        double smin = -feas_tol;
        for (Index i = 0; i < mi; ++i) {
            if (is_active[static_cast<std::size_t>(i)]) continue;
            const double s = G_.row(i).dot(x) / std::max(1e-300, G_.row(i).norm());
            if (s < smin) {
                smin = s;
                p = i;
            }
        }
        if (p < 0) return x;
        const VectorXd np = G_.row(p).transpose();
        u(iq) = 0.0;
        for (;;) {
            if (++guard > cap) throw IllPosedError("projector: active-set iteration limit");
            step_directions(np);
            double t1 = kInf;
            Index drop = -1;
            for (Index k = 0; k < iq; ++k) {
                if (active[static_cast<std::size_t>(k)] < 0) continue;
                if (r(k) > 0.0 && u(k) / r(k) < t1) {
                    t1 = u(k) / r(k);
                    drop = k;
                }
            }
            double t2 = kInf;
            if (z.norm() > eps * np.norm() * 1e2) t2 = -np.dot(x) / z.dot(np);
            const double t = std::min(t1, t2);
            if (t == kInf) throw IllPosedError("projector: infeasible constraint set");
            if (t2 == kInf) {
                u.head(iq) -= t * r.head(iq);
                u(iq) += t;
                delete_constraint(drop);
                continue;
            }
            x += t * z;
            u.head(iq) -= t * r.head(iq);
            u(iq) += t;
            if (t2 <= t1) {
                active.push_back(p);
                is_active[static_cast<std::size_t>(p)] = 1;
                if (!add_constraint()) {
                    // Numerically dependent normal: treat as satisfied.
                    --iq;
                    active.pop_back();
                    is_active[static_cast<std::size_t>(p)] = 0;
                }
                break;
            }
            delete_constraint(drop);
        }
    }
}

SimplexQP make_simplex_ls_problem(const VectorXd& z1, const MatrixXd& Z, double normalizer) {
    if (Z.rows() != z1.size())
        throw DomainError("design has " + std::to_string(Z.rows()) + " rows but z1 has " +
                          std::to_string(z1.size()));
    if (Z.cols() == 0) throw DomainError("design has no columns");
    if (!(normalizer > 0.0)) throw DomainError("normalizer must be positive");
    SimplexQP qp;
    const double inv = 1.0 / normalizer;
    qp.hessian.noalias() = inv * (Z.transpose() * Z);
    qp.linear.noalias() = inv * (Z.transpose() * z1);
    qp.constant = inv * z1.squaredNorm();
    const Index d = Z.cols();
    qp.sum_coeffs = VectorXd::Ones(d);
    qp.ineq = MatrixXd::Identity(d, d);
    qp.plain_simplex = true;
    for (Index j = 0; j < d; ++j) {
        VariableBlock b;
        b.donor = static_cast<std::size_t>(j);
        b.offset = j;
        qp.blocks.push_back(b);
    }
    qp.start = VectorXd::Constant(d, 1.0 / static_cast<double>(d));
    for (Index a = 0; a < d; ++a)
        for (Index b = a + 1; b < d; ++b)
            if ((Z.col(a) - Z.col(b)).cwiseAbs().maxCoeff() <=
                1e-12 * (1.0 + Z.col(a).cwiseAbs().maxCoeff()))
                qp.duplicate_donors.emplace_back(a, b);
    return qp;
}

namespace {

struct Projector {
    const SimplexQP& qp;
    std::optional<PolyhedralProjector> poly;

    explicit Projector(const SimplexQP& q) : qp(q) {
        if (!qp.plain_simplex) poly.emplace(qp.sum_coeffs, qp.ineq);
    }
    VectorXd operator()(const VectorXd& y) const {
        return qp.plain_simplex ? project_simplex(y) : poly->project(y);
    }
};

double inf_norm(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Gradient-mapping residual at a fixed reference step.
double kkt_residual(const SimplexQP& qp, const Projector& proj, const VectorXd& x,
                    double step) {
    const VectorXd grad = 2.0 * (qp.hessian * x - qp.linear);
    const VectorXd y = proj(x - step * grad);
    return inf_norm(y - x) / step / (1.0 + inf_norm(grad));
}

bool feasible(const SimplexQP& qp, const VectorXd& x) {
    const double scale = 1.0 + inf_norm(x);
    if (std::abs(qp.sum_coeffs.dot(x) - 1.0) > 1e-10 * scale) return false;
    for (Index i = 0; i < qp.ineq.rows(); ++i)
        if (qp.ineq.row(i).dot(x) < -1e-12 * scale * std::max(1.0, qp.ineq.row(i).norm()))
            return false;
    return true;
}

// Minimizes on the face {e'x = 1, G_A x = 0}, A = constraints active at x.
std::optional<VectorXd> face_solve(const SimplexQP& qp, const VectorXd& x) {
    const Index n = qp.dim();
    const double scale = 1.0 + inf_norm(x);
    std::vector<Index> act;
    for (Index i = 0; i < qp.ineq.rows(); ++i)
        if (qp.ineq.row(i).dot(x) <= 1e-9 * scale * qp.ineq.row(i).norm()) act.push_back(i);
    const Index k = 1 + static_cast<Index>(act.size());
    if (k > n + 1) return std::nullopt;
    MatrixXd K = MatrixXd::Zero(n + k, n + k);
    VectorXd rhs = VectorXd::Zero(n + k);
    K.topLeftCorner(n, n) = 2.0 * qp.hessian;
    rhs.head(n) = 2.0 * qp.linear;
    K.block(n, 0, 1, n) = qp.sum_coeffs.transpose();
    K.block(0, n, n, 1) = qp.sum_coeffs;
    rhs(n) = 1.0;
    for (std::size_t a = 0; a < act.size(); ++a) {
        const Index row = n + 1 + static_cast<Index>(a);
        K.block(row, 0, 1, n) = qp.ineq.row(act[a]);
        K.block(0, row, n, 1) = qp.ineq.row(act[a]).transpose();
    }
    Eigen::FullPivLU<MatrixXd> lu(K);
    lu.setThreshold(1e-12);
    VectorXd sol = lu.solve(rhs);
    if (!sol.allFinite()) return std::nullopt;
    if ((K * sol - rhs).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + inf_norm(rhs))) return std::nullopt;
    VectorXd cand = sol.head(n);
    // Snap active constraints that were meant to hold with equality.
    if (qp.plain_simplex) {
        cand = cand.cwiseMax(0.0);
        const double sum = cand.sum();
        if (!(sum > 0.0)) return std::nullopt;
        cand /= sum;
    }
    return cand;
}

}  // namespace

JointSolution solve_qp(const SimplexQP& qp, const SolverOptions& options, bool record_trace) {
    const Index n = qp.dim();
    if (n == 0) throw DomainError("solve_qp: empty problem");
    if (qp.linear.size() != n || qp.sum_coeffs.size() != n || qp.ineq.cols() != n)
        throw DomainError("solve_qp: inconsistent problem dimensions");
    if (options.tol <= 0.0 || options.max_iter <= 0)
        throw ConfigError("solver: tol and max_iter must be positive");

    const Projector proj(qp);
    JointSolution out;

    // 1/L with L = 2 * lambda_max(H) bounded by the max absolute row sum.
    const double lmax = 2.0 * qp.hessian.cwiseAbs().rowwise().sum().maxCoeff();
    const double ref_step = lmax > 0.0 ? 1.0 / lmax : 1.0;

    VectorXd x = proj(qp.start.size() == n ? qp.start : VectorXd::Constant(n, 1.0 / n));
    VectorXd Hx = qp.hessian * x;
    double f = x.dot(Hx) - 2.0 * qp.linear.dot(x) + qp.constant;
    VectorXd grad = 2.0 * (Hx - qp.linear);
    double alpha = ref_step;
    if (record_trace) out.trace.push_back(f);
    // Rounding level of the expanded objective; exact face solutions may land
    // this far above an iterate that only differs by noise.
    const double f_slack = 16.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(qp.constant));

    bool converged = false;
    int it = 0;
    VectorXd y(n), d(n), Hy(n);
    for (; it < options.max_iter; ++it) {
        const double tol_scaled = options.tol * (1.0 + inf_norm(grad));
        double fy = f;
        bool accepted = false;
        for (int bt = 0; bt < 60; ++bt) {
            y = proj(x - alpha * grad);
            d = y - x;
            Hy.noalias() = qp.hessian * y;
            fy = y.dot(Hy) - 2.0 * qp.linear.dot(y) + qp.constant;
            const double model = f + grad.dot(d) + d.squaredNorm() / (2.0 * alpha);
            if (fy <= model + 1e-15 * std::abs(f) && fy <= f) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            // No decrease possible at machine precision: x is stationary.
            converged = true;
            break;
        }
        const double step_res = inf_norm(d) / alpha;
        const VectorXd grad_new = 2.0 * (Hy - qp.linear);
        const VectorXd s = d;
        const VectorXd yv = grad_new - grad;
        x = y;
        f = fy;
        grad = grad_new;
        if (record_trace) out.trace.push_back(f);

        if (step_res <= tol_scaled &&
            (alpha <= ref_step || kkt_residual(qp, proj, x, ref_step) <= options.tol)) {
            converged = true;
            ++it;
            break;
        }
        // Periodic exact solve on the current face.
        if ((it + 1) % 100 == 0) {
            if (auto cand = face_solve(qp, x); cand && feasible(qp, *cand)) {
                const double fc = qp.objective(*cand);
                if (fc <= f + f_slack && kkt_residual(qp, proj, *cand, ref_step) <= options.tol) {
                    x = *cand;
                    f = fc;
                    if (record_trace) out.trace.push_back(f);
                    converged = true;
                    ++it;
                    break;
                }
            }
        }
        const double sy = s.dot(yv);
        alpha = sy > 0.0 ? s.squaredNorm() / sy : 1e3 * ref_step;
        alpha = std::clamp(alpha, 1e-20, 1e20);
    }

    // Exact solve on the identified face; accepted only if it does not hurt.
    if (auto cand = face_solve(qp, x); cand && feasible(qp, *cand)) {
        const double fc = qp.objective(*cand);
        if (fc <= f || (fc <= f + f_slack && kkt_residual(qp, proj, *cand, ref_step) <
                                                 kkt_residual(qp, proj, x, ref_step))) {
            x = *cand;
            f = fc;
            if (record_trace) out.trace.push_back(f);
        }
    }
    out.kkt_residual = kkt_residual(qp, proj, x, ref_step);
    if (out.kkt_residual <= options.tol) converged = true;
    out.status = converged ? SolveStatus::Converged : SolveStatus::MaxIter;
    out.iterations = it;
    out.x = x;
    out.objective = f;
    out.non_unique = !qp.duplicate_donors.empty();
    out.w = x;
    return out;
}

namespace {

// Lawson-Hanson style active set for min ||z - Z w||^2 over the simplex.
// Returns nullopt when it cannot certify optimality (degenerate designs);
// the caller then falls back to projected gradient.
std::optional<VectorXd> simplex_ls_active_set(const VectorXd& z, const MatrixXd& Z, double tol,
                                              int& iterations) {
    const Index n = Z.cols();
    VectorXd w = VectorXd::Zero(n);
    Index best = 0;
    double best_obj = kInf;
    for (Index j = 0; j < n; ++j) {
        const double o = (z - Z.col(j)).squaredNorm();
        if (o < best_obj) {
            best_obj = o;
            best = j;
        }
    }
    w(best) = 1.0;
    std::vector<Index> F{best};
    const int max_outer = 3 * static_cast<int>(n) + 20;
    for (int outer = 0; outer < max_outer; ++outer) {
        ++iterations;
        const VectorXd g = Z.transpose() * (Z * w - z);
        double lambda = 0.0;
        for (Index i : F) lambda += g(i);
        lambda /= static_cast<double>(F.size());
        const double thresh = -tol * (1.0 + inf_norm(g));
        Index add = -1;
        double most = thresh;
        for (Index i = 0; i < n; ++i) {
            if (std::find(F.begin(), F.end(), i) != F.end()) continue;
            if (g(i) - lambda < most) {
                most = g(i) - lambda;
                add = i;
            }
        }
        if (add < 0) {
            // Equal reduced gradients on F are part of the certificate.
            for (Index i : F)
                if (std::abs(g(i) - lambda) > -thresh) return std::nullopt;
            return w;
        }
        F.push_back(add);
        for (int inner = 0;; ++inner) {
            if (inner > static_cast<int>(n) + 5) return std::nullopt;
            const Index k = static_cast<Index>(F.size());
            VectorXd s = w;
            if (k > 1) {
                MatrixXd AN(Z.rows(), k - 1);
                const Index last = F.back();
                for (Index c = 0; c + 1 < k; ++c) AN.col(c) = Z.col(F[c]) - Z.col(last);
                const VectorXd rhs = z - Z * w;
                const VectorXd v = Eigen::CompleteOrthogonalDecomposition<MatrixXd>(AN).solve(rhs);
                for (Index c = 0; c + 1 < k; ++c) {
                    s(F[c]) += v(c);
                    s(last) -= v(c);
                }
            }
            bool positive = true;
            for (Index i : F) positive = positive && s(i) > 0.0;
            if (positive) {
                w = s;
                break;
            }
            double alpha = 1.0;
            for (Index i : F)
                if (s(i) <= 0.0) alpha = std::min(alpha, w(i) / (w(i) - s(i)));
            if (alpha <= 0.0 && inner == 0) return std::nullopt;  // new index blocked
            w += alpha * (s - w);
            std::vector<Index> keep;
            for (Index i : F) {
                if (w(i) <= 1e-15 * (1.0 + inf_norm(w)) || (s(i) <= 0.0 && w(i) <= 0.0)) {
                    w(i) = 0.0;
                } else {
                    keep.push_back(i);
                }
            }
            if (keep.empty()) return std::nullopt;
            F = std::move(keep);
            const double sum = w.sum();
            w /= sum;
        }
    }
    return std::nullopt;
}

}  // namespace

JointSolution solve_simplex_ls(const VectorXd& z1, const MatrixXd& Z,
                               const SolverOptions& options, int T0) {
    const double norm = T0 > 0 ? static_cast<double>(T0) : static_cast<double>(z1.size());
    SimplexQP qp = make_simplex_ls_problem(z1, Z, norm);
    int iterations = 0;
    if (auto w = simplex_ls_active_set(z1, Z, options.tol, iterations)) {
        const Projector proj(qp);
        const double lmax = 2.0 * qp.hessian.cwiseAbs().rowwise().sum().maxCoeff();
        JointSolution out;
        out.x = *w;
        out.w = *w;
        out.objective = (z1 - Z * *w).squaredNorm() / norm;
        out.iterations = iterations;
        out.kkt_residual = kkt_residual(qp, proj, *w, lmax > 0.0 ? 1.0 / lmax : 1.0);
        out.non_unique = !qp.duplicate_donors.empty();
        if (out.kkt_residual <= options.tol) return out;
        qp.start = *w;
    }
    JointSolution out = solve_qp(qp, options);
    out.iterations += iterations;
    return out;
}

VectorXd solve_ols(const VectorXd& z1, const MatrixXd& Z) {
    if (Z.rows() != z1.size()) throw DomainError("solve_ols: dimension mismatch");
    if (Z.cols() == 0) throw DomainError("solve_ols: empty design");
    const MatrixXd G = Z.transpose() * Z;
    Eigen::JacobiSVD<MatrixXd> svd(G);
    const auto& sv = svd.singularValues();
    const double smin = sv(sv.size() - 1);
    if (!(smin > 0.0) || sv(0) / smin >= 1e12)
        throw IllPosedError("solve_ols: singular normal equations");
    return Eigen::ColPivHouseholderQR<MatrixXd>(Z).solve(z1);
}

VectorXd project_metric(const VectorXd& target, const MatrixXd& M, const SolverOptions& options) {
    const Index n = target.size();
    if (n == 0) throw DomainError("project_metric: empty target");
    if (M.rows() != n || M.cols() != n) throw DomainError("project_metric: metric dimension mismatch");
    if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + M.cwiseAbs().maxCoeff()))
        throw DomainError("project_metric: metric is not symmetric");
    SimplexQP qp;
    qp.hessian = M;
    qp.linear = M * target;
    qp.constant = target.dot(M * target);
    qp.sum_coeffs = VectorXd::Ones(n);
    qp.ineq = MatrixXd::Identity(n, n);
    qp.plain_simplex = true;
    qp.start = project_simplex(target);
    return solve_qp(qp, options).x;
}

MatrixXd lifted_matrix(const AlignedDesign& design, const LagPolyBasis& basis) {
    const Index rows = design.rows();
    const Index T0 = design.T0;
    Index cols = 0;
    for (const auto& dc : design.donors) cols += dc.midas ? basis.degree : 1;
    MatrixXd A(rows, cols);
    Index c = 0;
    for (const auto& dc : design.donors) {
        if (!dc.midas) {
            if (dc.fixed.size() != rows)
                throw DomainError("donor " + dc.id + ": column length " +
                                  std::to_string(dc.fixed.size()) + " != " + std::to_string(rows));
            A.col(c++) = dc.fixed;
            continue;
        }
        const int m = static_cast<int>(dc.high.cols());
        if (dc.high.rows() != T0 || dc.cov_rows.size() != rows - T0)
            throw DomainError("donor " + dc.id + ": high-frequency block has wrong shape");
        const MatrixXd lag = basis.lag_matrix(m);
        const MatrixXd out_rows = dc.high * lag;  // T0 x L
        const VectorXd s = lag.colwise().sum().transpose();
        for (int l = 0; l < basis.degree; ++l) {
            A.col(c).head(T0) = out_rows.col(l);
            A.col(c).tail(rows - T0) = s(l) * dc.cov_rows;
            ++c;
        }
    }
    return A;
}

SimplexQP build_lifted_problem(const AlignedDesign& design, const LagPolyBasis& basis,
                               bool nonneg_midas) {
    if (design.donors.empty()) throw DomainError("donor pool is empty");
    if (design.T0 <= 0 || design.rows() != static_cast<Index>(design.Q + 1) * design.T0)
        throw DomainError("design: z1 length must be (Q+1)*T0");
    const MatrixXd A = lifted_matrix(design, basis);
    SimplexQP qp = make_simplex_ls_problem(design.z1, A, static_cast<double>(design.T0));
    const Index d = A.cols();
    qp.blocks.clear();
    qp.duplicate_donors.clear();

    std::vector<Eigen::RowVectorXd> rows;
    Index off = 0;
    bool any_midas = false;
    const double J = static_cast<double>(design.donors.size());
    for (std::size_t j = 0; j < design.donors.size(); ++j) {
        const auto& dc = design.donors[j];
        VariableBlock b;
        b.donor = j;
        b.offset = off;
        if (!dc.midas) {
            b.size = 1;
            qp.sum_coeffs(off) = 1.0;
            Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(d);
            g(off) = 1.0;
            rows.push_back(g);
            qp.start(off) = 1.0 / J;
        } else {
            any_midas = true;
            const int m = static_cast<int>(dc.high.cols());
            b.size = basis.degree;
            b.midas = true;
            b.lag_matrix = basis.lag_matrix(m);
            const VectorXd s = b.lag_matrix.colwise().sum().transpose();
            qp.sum_coeffs.segment(off, b.size) = s;
            if (nonneg_midas) {
                for (int k = 0; k < m; ++k) {
                    Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(d);
                    g.segment(off, b.size) = b.lag_matrix.row(k);
                    rows.push_back(g);
                }
            } else {
                Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(d);
                g.segment(off, b.size) = s.transpose();
                rows.push_back(g);
            }
            const VectorXd zeta0 = uniform_midas_weights(m, basis).zeta;
            qp.start.segment(off, b.size) = zeta0 / J;
        }
        qp.blocks.push_back(b);
        off += b.size;
    }
    qp.ineq.resize(static_cast<Index>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i) qp.ineq.row(static_cast<Index>(i)) = rows[i];
    qp.plain_simplex = !any_midas;

    // Donors whose design contribution is identical (same column or same block).
    for (std::size_t a = 0; a < qp.blocks.size(); ++a) {
        for (std::size_t b = a + 1; b < qp.blocks.size(); ++b) {
            const auto& ba = qp.blocks[a];
            const auto& bb = qp.blocks[b];
            if (ba.size != bb.size || ba.midas != bb.midas) continue;
            if (ba.midas && ba.lag_matrix.rows() != bb.lag_matrix.rows()) continue;
            const auto ca = A.middleCols(ba.offset, ba.size);
            const auto cb = A.middleCols(bb.offset, bb.size);
            if ((ca - cb).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + ca.cwiseAbs().maxCoeff()))
                qp.duplicate_donors.emplace_back(a, b);
        }
    }
    return qp;
}

JointSolution solve_joint(const SimplexQP& qp, const SolverOptions& options, bool record_trace) {
    JointSolution sol = solve_qp(qp, options, record_trace);
    if (qp.blocks.empty()) return sol;
    const VectorXd x = sol.x;
    sol.w.resize(static_cast<Index>(qp.blocks.size()));
    sol.midas.clear();
    sol.midas_donor.clear();
    sol.degenerate_units.clear();
    for (std::size_t j = 0; j < qp.blocks.size(); ++j) {
        const auto& b = qp.blocks[j];
        const auto jj = static_cast<Index>(j);
        if (!b.midas) {
            sol.w(jj) = x(b.offset);
            continue;
        }
        const VectorXd eta = x.segment(b.offset, b.size);
        const VectorXd s = b.lag_matrix.colwise().sum().transpose();
        const double wj = s.dot(eta);
        sol.w(jj) = wj;
        const int m = static_cast<int>(b.lag_matrix.rows());
        MidasWeights mw;
        mw.m = m;
        if (wj > kRecoveryThreshold) {
            mw.zeta = eta / wj;
            mw.weights = b.lag_matrix * mw.zeta;
        } else {
            const MidasWeights uni = uniform_midas_weights(m, LagPolyBasis{static_cast<int>(b.size)});
            mw.zeta = uni.zeta;
            mw.weights = uni.weights;
            sol.degenerate_units.push_back(j);
        }
        sol.midas.push_back(std::move(mw));
        sol.midas_donor.push_back(j);
    }
    return sol;
}

}  // namespace mfscm
