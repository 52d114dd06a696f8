#include "ddpc/qp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

namespace ddpc {

namespace {

constexpr double kTiny = 1e-300;

double inf_norm(const Vec& v)
{
    return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
}

} // namespace

void QpProblem::validate() const
{
    const Index d = P.rows();
    detail::require(d >= 1, "QpProblem: dimension must be >= 1");
    detail::require(P.cols() == d, "QpProblem: P must be square");
    detail::require(q.size() == d, "QpProblem: q size mismatch");
    detail::require(Aeq.rows() == beq.size(), "QpProblem: Aeq/beq row mismatch");
    detail::require(Ain.rows() == bin.size(), "QpProblem: Ain/bin row mismatch");
    if (Aeq.rows() > 0)
        detail::require(Aeq.cols() == d, "QpProblem: Aeq column mismatch");
    if (Ain.rows() > 0)
        detail::require(Ain.cols() == d, "QpProblem: Ain column mismatch");

    const double scale = std::max(1.0, P.cwiseAbs().maxCoeff());
    if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw ContractError("QpProblem: P is not symmetric");
}

ActiveSetQp::ActiveSetQp(QpProblem qp, QpOptions opts)
    : ActiveSetQp(std::move(qp), opts, true)
{
}

ActiveSetQp::ActiveSetQp(QpProblem qp, QpOptions opts, bool allow_phase1)
    : qp_(std::move(qp)), opts_(opts), allow_phase1_(allow_phase1)
{
    qp_.validate();
    qp_.P = ((qp_.P + qp_.P.transpose()) / 2.0).eval();

    // Definiteness screen. An ill-conditioned but positive definite P can
    // fail Cholesky in floating point, so LLT failure alone is not treated
    // as an error; eigenvalues clearly below the roundoff band are.
    Eigen::LLT<Mat> llt(qp_.P);
    if (llt.info() != Eigen::Success) {
        Eigen::SelfAdjointEigenSolver<Mat> es(qp_.P, Eigen::EigenvaluesOnly);
        const double lam_min = es.eigenvalues().minCoeff();
        const double lam_scale = es.eigenvalues().cwiseAbs().maxCoeff();
        const double band = 100.0 * std::numeric_limits<double>::epsilon() *
                            std::max(1.0, lam_scale);
        if (lam_min < -band) {
            std::ostringstream msg;
            msg << "ActiveSetQp: P is not positive definite (lambda_min = " << lam_min
                << ")";
            throw ContractError(msg.str());
        }
        // Ambiguous within roundoff: defer to the KKT factorization below.
    }

    factorize_base();
}

void ActiveSetQp::factorize_base()
{
    const Index d = qp_.dim();
    const Index e = qp_.num_eq();
    const Index N = d + e;

    if (e > 0) {
        // Dependent equality rows would make the base KKT matrix singular;
        // decide up front whether they are contradictory or merely redundant.
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(qp_.Aeq);
        if (cod.rank() < e) {
            Vec g = cod.solve(qp_.beq);
            const double resid = inf_norm(qp_.Aeq * g - qp_.beq);
            if (resid > opts_.feas_tol * (1.0 + inf_norm(qp_.beq))) {
                std::ostringstream msg;
                msg << "QP infeasible: equality constraints are inconsistent (residual "
                    << resid << ")";
                throw QpInfeasible(msg.str());
            }
            throw ContractError(
                "ActiveSetQp: equality rows are linearly dependent (redundant "
                "constraints are not supported)");
        }
    }

    K0_.setZero(N, N);
    K0_.topLeftCorner(d, d) = qp_.P;
    if (e > 0) {
        K0_.topRightCorner(d, e) = qp_.Aeq.transpose();
        K0_.bottomLeftCorner(e, d) = qp_.Aeq;
    }

    // Symmetric Ruiz equilibration keeps the factorization usable when the
    // cost blocks span many orders of magnitude (large lambda_y against a
    // tiny ridge on g).
    scale_ = Vec::Ones(N);
    for (int pass = 0; pass < 5; ++pass) {
        Mat Ks = scale_.asDiagonal() * K0_ * scale_.asDiagonal();
        for (Index i = 0; i < N; ++i) {
            const double r = Ks.row(i).cwiseAbs().maxCoeff();
            scale_(i) /= std::sqrt(std::max(r, kTiny));
        }
    }
    Mat Ks = scale_.asDiagonal() * K0_ * scale_.asDiagonal();
    K0_lu_.compute(Ks);
    if (!K0_lu_.isInvertible())
        throw ContractError(
            "ActiveSetQp: base KKT matrix is singular; P may be only positive "
            "semidefinite on the equality null space, or the equality rows may be "
            "linearly dependent");
}

Mat ActiveSetQp::base_solve(const Mat& rhs) const
{
    // Iterative refinement with a residual monitor: accept a correction only
    // while it actually shrinks the residual, so extreme conditioning cannot
    // make things worse.
    Mat z = scale_.asDiagonal() * K0_lu_.solve(scale_.asDiagonal() * rhs);
    Mat r = rhs - K0_ * z;
    double rn = r.norm();
    for (int pass = 0; pass < 2 && rn > 0.0; ++pass) {
        Mat z2 = z + scale_.asDiagonal() * K0_lu_.solve(scale_.asDiagonal() * r);
        Mat r2 = rhs - K0_ * z2;
        const double rn2 = r2.norm();
        if (rn2 >= 0.5 * rn)
            break;
        z.swap(z2);
        r.swap(r2);
        rn = rn2;
    }
    return z;
}

ActiveSetQp::BorderedKkt ActiveSetQp::make_bordered(const std::vector<int>& working) const
{
    BorderedKkt bk;
    const Index d = qp_.dim();
    const Index e = qp_.num_eq();
    const auto w = static_cast<Index>(working.size());
    if (w == 0)
        return bk;

    bk.B.setZero(w, d + e);
    for (Index k = 0; k < w; ++k)
        bk.B.block(k, 0, 1, d) = qp_.Ain.row(working[static_cast<std::size_t>(k)]);
    bk.Y = base_solve(bk.B.transpose());
    bk.S_lu.compute(bk.B * bk.Y);
    bk.invertible = bk.S_lu.isInvertible();
    return bk;
}

void ActiveSetQp::bordered_solve(const BorderedKkt& bk, const Mat& rhs_base,
                                 const Mat& rhs_border, Mat& z, Mat& mu) const
{
    z = base_solve(rhs_base);
    if (bk.B.rows() == 0) {
        mu.resize(0, rhs_base.cols());
        return;
    }
    mu = bk.S_lu.solve(bk.B * z - rhs_border);
    z -= bk.Y * mu;

    // Monitored refinement over the full bordered system.
    Mat r_base = rhs_base - K0_ * z - bk.B.transpose() * mu;
    Mat r_border = rhs_border - bk.B * z;
    double rn = std::sqrt(r_base.squaredNorm() + r_border.squaredNorm());
    for (int pass = 0; pass < 2 && rn > 0.0; ++pass) {
        Mat dz = base_solve(r_base);
        Mat dmu = bk.S_lu.solve(bk.B * dz - r_border);
        Mat z2 = z + dz - bk.Y * dmu;
        Mat mu2 = mu + dmu;
        Mat rb2 = rhs_base - K0_ * z2 - bk.B.transpose() * mu2;
        Mat rw2 = rhs_border - bk.B * z2;
        const double rn2 = std::sqrt(rb2.squaredNorm() + rw2.squaredNorm());
        if (rn2 >= 0.5 * rn)
            break;
        z.swap(z2);
        mu.swap(mu2);
        r_base.swap(rb2);
        r_border.swap(rw2);
        rn = rn2;
    }
}

Vec ActiveSetQp::feasible_start() const
{
    const Index d = qp_.dim();
    const Index e = qp_.num_eq();
    const Index c = qp_.num_in();

    Vec g = Vec::Zero(d);
    if (e > 0) {
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(qp_.Aeq);
        g = cod.solve(qp_.beq);
        const double resid = inf_norm(qp_.Aeq * g - qp_.beq);
        if (resid > opts_.feas_tol * (1.0 + inf_norm(qp_.beq))) {
            std::ostringstream msg;
            msg << "QP infeasible: equality constraints are inconsistent (residual "
                << resid << ")";
            throw QpInfeasible(msg.str());
        }
    }
    if (c == 0)
        return g;

    const double bin_scale = 1.0 + inf_norm(qp_.bin);
    double viol = (qp_.Ain * g - qp_.bin).maxCoeff();
    if (viol <= opts_.feas_tol * bin_scale)
        return g;

    if (!allow_phase1_)
        throw QpInfeasible("QP infeasible: phase-1 start is not available here");

    // Phase 1: minimize the worst violation t over (g, t) with a small ridge
    // keeping the subproblem strictly convex. Re-centering with a shrinking
    // ridge drives t to zero quickly when the region is nonempty.
    double ridge = 1e-6;
    double prev_viol = viol;
    for (int round = 0; round < 4; ++round) {
        QpProblem p1;
        p1.P = Mat::Zero(d + 1, d + 1);
        p1.P.topLeftCorner(d, d) = ridge * Mat::Identity(d, d);
        p1.P(d, d) = 1.0;
        p1.q = Vec::Zero(d + 1);
        p1.q.head(d) = -ridge * g;
        p1.q(d) = 1.0;
        p1.Aeq.setZero(e, d + 1);
        if (e > 0)
            p1.Aeq.leftCols(d) = qp_.Aeq;
        p1.beq = qp_.beq;
        p1.Ain.setZero(c + 1, d + 1);
        p1.Ain.topLeftCorner(c, d) = qp_.Ain;
        p1.Ain.col(d).head(c).setConstant(-1.0);
        p1.Ain(c, d) = -1.0;
        p1.bin.setZero(c + 1);
        p1.bin.head(c) = qp_.bin;

        ActiveSetQp solver(std::move(p1), opts_, false);
        Vec start(d + 1);
        start.head(d) = g;
        start(d) = viol + 1.0;
        QpSolution sol = solver.run_active_set(start, {});

        g = sol.g_star.head(d);
        viol = (qp_.Ain * g - qp_.bin).maxCoeff();
        if (viol <= opts_.feas_tol * bin_scale)
            return g;
        if (round > 0 && viol > 0.5 * prev_viol)
            break; // stagnating: the region is (numerically) empty
        prev_viol = viol;
        ridge *= 1e-2;
    }

    std::ostringstream msg;
    msg << "QP infeasible: inequality system has no solution (best violation " << viol
        << ")";
    throw QpInfeasible(msg.str());
}

QpSolution ActiveSetQp::finish(const Vec& g, const Vec& nu, const std::vector<int>& working,
                               const Vec& mu_working, int iterations) const
{
    QpSolution sol;
    sol.g_star = g;
    sol.eq_multipliers = nu;
    sol.ineq_multipliers = Vec::Zero(qp_.num_in());
    for (std::size_t k = 0; k < working.size(); ++k)
        sol.ineq_multipliers(working[k]) = std::max(mu_working(static_cast<Index>(k)), 0.0);
    if (qp_.num_in() > 0) {
        Vec slack = qp_.bin - qp_.Ain * g;
        for (Index i = 0; i < slack.size(); ++i)
            if (slack(i) <= opts_.active_tol)
                sol.active_set.push_back(static_cast<int>(i));
    }
    sol.objective = 0.5 * g.dot(qp_.P * g) + qp_.q.dot(g);
    sol.iterations = iterations;
    return sol;
}

QpSolution ActiveSetQp::run_active_set(Vec g, std::vector<int> working) const
{
    const Index d = qp_.dim();
    const Index e = qp_.num_eq();
    const Index c = qp_.num_in();

    std::vector<char> in_working(static_cast<std::size_t>(c), 0);
    for (int i : working)
        in_working[static_cast<std::size_t>(i)] = 1;

    Mat z, mu;
    for (int iter = 1; iter <= opts_.max_iterations; ++iter) {
        BorderedKkt bk = make_bordered(working);
        if (!bk.invertible)
            throw std::runtime_error(
                "ActiveSetQp: working-set KKT system became singular");

        Vec Pg = qp_.P * g;
        Vec grad = Pg + qp_.q;
        const double phi = 0.5 * g.dot(Pg) + qp_.q.dot(g);

        Mat rhs_base = Mat::Zero(d + e, 1);
        rhs_base.col(0).head(d) = -grad;
        Mat rhs_border = Mat::Zero(static_cast<Index>(working.size()), 1);
        bordered_solve(bk, rhs_base, rhs_border, z, mu);
        Vec p = z.col(0).head(d);
        Vec nu = z.col(0).tail(e);

        // Stationary when the step vanishes or when it cannot produce a
        // meaningful objective decrease; the latter catches steps that are
        // pure roundoff amplified along nearly flat directions.
        const double p_norm = inf_norm(p);
        const double predicted_decrease = -(grad.dot(p) + 0.5 * p.dot(qp_.P * p));
        if (p_norm <= 1e-11 * (1.0 + inf_norm(g)) ||
            predicted_decrease <= 1e-12 * (1.0 + std::abs(phi))) {
            if (working.empty())
                return finish(g, nu, working, Vec(), iter);
            Index worst = 0;
            const double mu_min = mu.col(0).minCoeff(&worst);
            const double dual_scale =
                1.0 + mu.col(0).cwiseAbs().maxCoeff() + inf_norm(nu);
            if (mu_min >= -opts_.tol * dual_scale)
                return finish(g, nu, working, mu.col(0), iter);
            in_working[static_cast<std::size_t>(working[static_cast<std::size_t>(worst)])] = 0;
            working.erase(working.begin() + static_cast<std::ptrdiff_t>(worst));
            continue;
        }

        // Ratio test against the inequalities not currently held.
        double alpha = 1.0;
        int blocking = -1;
        if (c > 0) {
            Vec Ap = qp_.Ain * p;
            Vec slack = qp_.bin - qp_.Ain * g;
            const double dir_tol = 1e-12 * std::max(1.0, p_norm);
            for (Index i = 0; i < c; ++i) {
                if (in_working[static_cast<std::size_t>(i)] || Ap(i) <= dir_tol)
                    continue;
                const double cand = std::max(slack(i), 0.0) / Ap(i);
                if (cand < alpha) {
                    alpha = cand;
                    blocking = static_cast<int>(i);
                }
            }
        }

        g += alpha * p;
        if (blocking >= 0) {
            working.push_back(blocking);
            in_working[static_cast<std::size_t>(blocking)] = 1;
        }
    }
    throw std::runtime_error("ActiveSetQp: iteration limit reached");
}

QpSolution ActiveSetQp::solve()
{
    return run_active_set(feasible_start(), {});
}

QpSolution ActiveSetQp::solve(const std::vector<int>& warm_active_set)
{
    const Index d = qp_.dim();
    const Index e = qp_.num_eq();
    const Index c = qp_.num_in();

    std::set<int> filtered;
    for (int i : warm_active_set)
        if (i >= 0 && i < c)
            filtered.insert(i);
    std::vector<int> working(filtered.begin(), filtered.end());

    if (!working.empty() || c == 0 || e > 0) {
        BorderedKkt bk = make_bordered(working);
        if (bk.invertible) {
            Mat rhs_base = Mat::Zero(d + e, 1);
            rhs_base.col(0).head(d) = -qp_.q;
            rhs_base.col(0).tail(e) = qp_.beq;
            Mat rhs_border(static_cast<Index>(working.size()), 1);
            for (std::size_t k = 0; k < working.size(); ++k)
                rhs_border(static_cast<Index>(k), 0) = qp_.bin(working[k]);

            Mat z, mu;
            bordered_solve(bk, rhs_base, rhs_border, z, mu);
            Vec g = z.col(0).head(d);
            Vec nu = z.col(0).tail(e);

            bool ok = true;
            if (c > 0) {
                Vec viol = qp_.Ain * g - qp_.bin;
                ok = viol.maxCoeff() <= opts_.feas_tol * (1.0 + inf_norm(qp_.bin));
            }
            if (ok && !working.empty()) {
                const double dual_scale =
                    1.0 + mu.col(0).cwiseAbs().maxCoeff() + inf_norm(nu);
                ok = mu.col(0).minCoeff() >= -opts_.tol * dual_scale;
            }
            if (ok)
                return finish(g, nu, working, working.empty() ? Vec() : Vec(mu.col(0)), 1);
        }
    }
    return solve();
}

void ActiveSetQp::update_linear_terms(Vec q, Vec beq)
{
    detail::require(q.size() == qp_.dim(), "update_linear_terms: q size mismatch");
    detail::require(beq.size() == qp_.num_eq(), "update_linear_terms: beq size mismatch");
    qp_.q = std::move(q);
    qp_.beq = std::move(beq);
}

void ActiveSetQp::update_inequality_bounds(Vec bin)
{
    detail::require(bin.size() == qp_.num_in(),
                    "update_inequality_bounds: bin size mismatch");
    qp_.bin = std::move(bin);
}

AffineLaw ActiveSetQp::affine_law(const Mat& G, const Mat& Beq, const QpSolution& sol,
                                  const Vec& theta) const
{
    const Index d = qp_.dim();
    const Index e = qp_.num_eq();
    const Index n_theta = G.cols();
    detail::require(G.rows() == d, "affine_law: G row count must equal the QP dimension");
    detail::require(Beq.rows() == e && Beq.cols() == n_theta,
                    "affine_law: Beq must be (num equalities) x dim(theta)");
    detail::require(theta.size() == n_theta, "affine_law: theta dimension mismatch");
    detail::require(sol.g_star.size() == d, "affine_law: solution dimension mismatch");

    AffineLaw law;

    // Treat the active inequalities as equalities and differentiate the KKT
    // system. Weakly active constraints make the optimizer nondifferentiable,
    // so they are dropped first and the law is flagged.
    std::vector<int> region;
    for (int i : sol.active_set) {
        if (sol.ineq_multipliers(i) > opts_.weak_multiplier_tol)
            region.push_back(i);
        else
            law.degenerate = true;
    }

    BorderedKkt bk = make_bordered(region);
    while (!bk.invertible && !region.empty()) {
        // Linearly dependent active rows: drop the weakest remaining one.
        law.degenerate = true;
        std::size_t weakest = 0;
        for (std::size_t k = 1; k < region.size(); ++k)
            if (sol.ineq_multipliers(region[k]) < sol.ineq_multipliers(region[weakest]))
                weakest = k;
        region.erase(region.begin() + static_cast<std::ptrdiff_t>(weakest));
        bk = make_bordered(region);
    }

    Mat rhs_base(d + e, n_theta);
    rhs_base.topRows(d) = -G;
    rhs_base.bottomRows(e) = Beq;
    Mat rhs_border = Mat::Zero(static_cast<Index>(region.size()), n_theta);

    Mat Z, MU;
    bordered_solve(bk, rhs_base, rhs_border, Z, MU);
    law.A_tilde = Z.topRows(d);
    law.h_tilde = sol.g_star - law.A_tilde * theta;
    law.region_active_set = std::move(region);
    return law;
}

QpSolution solve(const QpProblem& qp, const QpOptions& opts)
{
    ActiveSetQp solver(qp, opts);
    return solver.solve();
}

AffineLaw affine_law(const QpProblem& qp, const Mat& G, const Mat& Beq,
                     const QpSolution& sol, const Vec& theta, const QpOptions& opts)
{
    ActiveSetQp solver(qp, opts);
    return solver.affine_law(G, Beq, sol, theta);
}

} // namespace ddpc
