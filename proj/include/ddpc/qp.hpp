#pragma once

#include "ddpc/types.hpp"

#include <Eigen/LU>

#include <stdexcept>
#include <vector>

namespace ddpc {

/// Dense convex quadratic program
///   min_g  (1/2) g' P g + q' g
///   s.t.   Aeq g = beq,  Ain g <= bin (componentwise).
///
/// P must be symmetric and positive definite on the feasible subspace.
/// Zero-row Aeq/Ain are allowed and mean "no constraints of that kind".
struct QpProblem {
    Mat P;
    Vec q;
    Mat Aeq;
    Vec beq;
    Mat Ain;
    Vec bin;

    Index dim() const { return P.rows(); }
    Index num_eq() const { return Aeq.rows(); }
    Index num_in() const { return Ain.rows(); }

    /// Checks dimensional consistency and symmetry of P. Throws ContractError.
    void validate() const;
};

struct QpOptions {
    /// Relative KKT residual tolerance.
    double tol = 1e-9;
    /// Absolute slack below which an inequality is reported active.
    double active_tol = 1e-8;
    /// Constraint violation accepted as feasible (phase-1 exit, warm starts).
    double feas_tol = 1e-7;
    /// Active multipliers below this are treated as weakly active when
    /// differentiating the optimizer.
    double weak_multiplier_tol = 1e-8;
    int max_iterations = 200;
};

struct QpSolution {
    Vec g_star;
    /// Multipliers nu with stationarity P g + q + Aeq' nu + Ain' mu = 0.
    Vec eq_multipliers;
    /// Multipliers mu >= 0, nonzero only on active inequalities.
    Vec ineq_multipliers;
    /// Indices i with bin_i - (Ain g*)_i <= active_tol, sorted ascending.
    std::vector<int> active_set;
    /// (1/2) g' P g + q' g at the optimizer.
    double objective = 0.0;
    int iterations = 0;
};

/// Thrown when the constraint set is (numerically) empty.
class QpInfeasible : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Local affine expansion of the optimizer of a parametric QP whose linear
/// terms depend affinely on a parameter theta:
///   q(theta) = G theta + q0,   beq(theta) = Beq theta + beq0.
/// Within the critical region where the active set stays fixed,
///   g*(theta) = A_tilde theta + h_tilde.
struct AffineLaw {
    Mat A_tilde;
    Vec h_tilde;
    std::vector<int> region_active_set;
    /// Set when weakly active constraints were dropped or the active
    /// constraint rows were linearly dependent; the law is then only one
    /// valid selection of the optimizer sensitivity.
    bool degenerate = false;
};

/// Primal active-set solver for a fixed constraint geometry. The factorized
/// base KKT system (P with the equality rows) is cached, so re-solving after
/// update_linear_terms costs only back-substitutions plus a small bordered
/// system per working-set change. Not reentrant; use one instance per thread.
class ActiveSetQp {
public:
    explicit ActiveSetQp(QpProblem qp, QpOptions opts = {});

    const QpProblem& problem() const { return qp_; }
    const QpOptions& options() const { return opts_; }

    /// Replaces q and beq, keeping P and the constraint matrices (and their
    /// cached factorization).
    void update_linear_terms(Vec q, Vec beq);

    /// Replaces the inequality right-hand side, keeping Ain. Like the linear
    /// terms, bin never enters the cached factorizations.
    void update_inequality_bounds(Vec bin);

    QpSolution solve();

    /// Tries the hinted active set first: if the corresponding equality-
    /// constrained solve is primal and dual feasible it is returned after a
    /// single back-substitution, which is the common case in receding-horizon
    /// use. Falls back to a cold solve otherwise.
    QpSolution solve(const std::vector<int>& warm_active_set);

    /// Differentiates the optimizer at `sol` with respect to theta, given the
    /// parametric terms q(theta) = G theta + q0 and beq(theta) = Beq theta +
    /// beq0. `theta` is the parameter value the problem currently embeds.
    AffineLaw affine_law(const Mat& G, const Mat& Beq, const QpSolution& sol,
                         const Vec& theta) const;

private:
    struct BorderedKkt {
        Mat B;  // |W| x (d+e) bordering rows [A_W, 0]
        Mat Y;  // (d+e) x |W| base solves of B'
        Eigen::FullPivLU<Mat> S_lu;
        bool invertible = true;
    };

    ActiveSetQp(QpProblem qp, QpOptions opts, bool allow_phase1);

    void factorize_base();
    Mat base_solve(const Mat& rhs) const;
    BorderedKkt make_bordered(const std::vector<int>& working) const;
    void bordered_solve(const BorderedKkt& bk, const Mat& rhs_base, const Mat& rhs_border,
                        Mat& z, Mat& mu) const;

    Vec feasible_start() const;
    QpSolution run_active_set(Vec g, std::vector<int> working) const;
    QpSolution finish(const Vec& g, const Vec& nu, const std::vector<int>& working,
                      const Vec& mu_working, int iterations) const;

    QpProblem qp_;
    QpOptions opts_;
    bool allow_phase1_ = true;

    Mat K0_;      // [[P, Aeq'], [Aeq, 0]]
    Vec scale_;   // symmetric equilibration diagonal
    Eigen::FullPivLU<Mat> K0_lu_;
};

/// One-shot convenience wrapper around ActiveSetQp.
QpSolution solve(const QpProblem& qp, const QpOptions& opts = {});

/// One-shot affine-law extraction; builds a solver internally.
AffineLaw affine_law(const QpProblem& qp, const Mat& G, const Mat& Beq,
                     const QpSolution& sol, const Vec& theta, const QpOptions& opts = {});

} // namespace ddpc
