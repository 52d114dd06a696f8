#include "ddpc/deepc.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <sstream>

namespace ddpc {

namespace {

Mat block_diag_repeat(const Mat& W, int count)
{
    Mat out = Mat::Zero(W.rows() * count, W.cols() * count);
    for (int i = 0; i < count; ++i)
        out.block(i * W.rows(), i * W.cols(), W.rows(), W.cols()) = W;
    return out;
}

Vec repeat_vector(const Vec& v, int count)
{
    Vec out(v.size() * count);
    for (int i = 0; i < count; ++i)
        out.segment(i * v.size(), v.size()) = v;
    return out;
}

void check_psd(const Mat& W, const char* name)
{
    detail::require(W.rows() == W.cols(), std::string(name) + " must be square");
    const double scale = std::max(1.0, W.cwiseAbs().maxCoeff());
    detail::require((W - W.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale,
                    std::string(name) + " must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(W, Eigen::EigenvaluesOnly);
    detail::require(es.eigenvalues().minCoeff() >= -1e-10 * scale,
                    std::string(name) + " must be positive semidefinite");
}

void check_pd(const Mat& W, const char* name)
{
    check_psd(W, name);
    Eigen::LLT<Mat> llt(W);
    detail::require(llt.info() == Eigen::Success,
                    std::string(name) + " must be positive definite");
}

} // namespace

void DeePCConfig::validate(int m, int p) const
{
    detail::require(Np >= 1 && Nf >= 1, "DeePCConfig: horizons must be >= 1");
    detail::require(Nc >= 0 && Nc <= Nf - 1, "DeePCConfig: Nc must be in [0, Nf-1]");
    detail::require(lambda_y >= 0.0 && lambda_g >= 0.0,
                    "DeePCConfig: regularization weights must be nonnegative");
    detail::require(Q.rows() == p && Q.cols() == p, "DeePCConfig: Q must be p x p");
    detail::require(R.rows() == m && R.cols() == m, "DeePCConfig: R must be m x m");
    check_psd(Q, "DeePCConfig: Q");
    check_pd(R, "DeePCConfig: R");
    detail::require(u_min.size() == m && u_max.size() == m,
                    "DeePCConfig: input bounds must be m-vectors");
    detail::require(y_min.size() == p && y_max.size() == p,
                    "DeePCConfig: output bounds must be p-vectors");
    detail::require((u_min.array() <= u_max.array()).all(),
                    "DeePCConfig: u_min must not exceed u_max");
    detail::require((y_min.array() <= y_max.array()).all(),
                    "DeePCConfig: y_min must not exceed y_max");
}

Vec ParametricQp::linear_cost(const Vec& r_window) const
{
    detail::require(r_window.size() == Qblk.rows(),
                    "linear_cost: reference window has the wrong length");
    return -data.Yf.transpose() * (Qblk * r_window);
}

double ParametricQp::constant_term(const Vec& theta, const Vec& r_window) const
{
    detail::require(theta.size() == theta_dim, "constant_term: theta dimension mismatch");
    detail::require(r_window.size() == Qblk.rows(),
                    "constant_term: reference window has the wrong length");
    return theta.dot(H * theta) + 0.5 * r_window.dot(Qblk * r_window);
}

ParametricQp assemble_parametric_qp(const DataBlocks& data, const DeePCConfig& cfg)
{
    cfg.validate(data.m, data.p);
    detail::require(data.Np == cfg.Np && data.Nf == cfg.Nf,
                    "assemble_parametric_qp: data horizons do not match the config");

    const Index d = data.L;
    const int m = data.m, p = data.p;
    const Index zdim = static_cast<Index>(p) * cfg.Np;
    const Index udim = static_cast<Index>(m) * cfg.Np;

    ParametricQp pqp;
    pqp.data = data;
    pqp.d = d;
    pqp.theta_dim = zdim + udim;
    pqp.Qblk = block_diag_repeat(cfg.Q, cfg.Nf);
    pqp.Rblk = block_diag_repeat(cfg.R, cfg.Nf);

    pqp.P = data.Yf.transpose() * pqp.Qblk * data.Yf +
            data.Uf.transpose() * pqp.Rblk * data.Uf +
            cfg.lambda_y * data.Yp.transpose() * data.Yp +
            cfg.lambda_g * Mat::Identity(d, d);
    pqp.P = ((pqp.P + pqp.P.transpose()) / 2.0).eval();

    if (cfg.lambda_g <= 0.0) {
        // Without the ridge, definiteness rests entirely on the data.
        Eigen::LLT<Mat> llt(pqp.P);
        if (llt.info() != Eigen::Success)
            throw ContractError(
                "assemble_parametric_qp: P is not positive definite; set lambda_g > 0 "
                "or provide richer data");
    }

    pqp.G = Mat::Zero(d, pqp.theta_dim);
    pqp.G.leftCols(zdim) = -cfg.lambda_y * data.Yp.transpose();

    pqp.H = Mat::Zero(pqp.theta_dim, pqp.theta_dim);
    pqp.H.topLeftCorner(zdim, zdim) = (cfg.lambda_y / 2.0) * Mat::Identity(zdim, zdim);

    pqp.Beq = Mat::Zero(udim, pqp.theta_dim);
    pqp.Beq.rightCols(udim) = Mat::Identity(udim, udim);

    const Index uf_rows = data.Uf.rows();
    const Index yf_rows = data.Yf.rows();
    pqp.Ain.resize(2 * uf_rows + 2 * yf_rows, d);
    pqp.Ain << data.Uf, -data.Uf, data.Yf, -data.Yf;
    pqp.bin.resize(pqp.Ain.rows());
    pqp.bin << repeat_vector(cfg.u_max, cfg.Nf), repeat_vector(-cfg.u_min, cfg.Nf),
        repeat_vector(cfg.y_max, cfg.Nf), repeat_vector(-cfg.y_min, cfg.Nf);

    return pqp;
}

PredictionMap prediction_map(const DataBlocks& data, const DeePCConfig& cfg)
{
    detail::require(data.Np == cfg.Np && data.Nf == cfg.Nf,
                    "prediction_map: data horizons do not match the config");
    const int p = data.p;
    PredictionMap map;
    map.p = p;
    map.Np = cfg.Np;
    map.M.resize(static_cast<Index>(p) * cfg.Np, data.L);
    // Shift the past-output window one step: drop the oldest output block,
    // append the first predicted output block.
    map.M.topRows(static_cast<Index>(p) * (cfg.Np - 1)) =
        data.Yp.bottomRows(static_cast<Index>(p) * (cfg.Np - 1));
    map.M.bottomRows(p) = data.Yf.topRows(p);
    return map;
}

DeepcController::DeepcController(const DataBlocks& data, DeePCConfig cfg,
                                 QpOptions qp_opts)
    : cfg_(std::move(cfg)), qp_opts_(qp_opts)
{
    pqp_ = assemble_parametric_qp(data, cfg_);
    map_ = prediction_map(data, cfg_);

    // Orthonormal basis of the row space of the stacked data matrix; see the
    // class comment for why restricting g to it is exact.
    const Index d = pqp_.d;
    Mat stacked(data.Up.rows() + data.Uf.rows() + data.Yp.rows() + data.Yf.rows(), d);
    stacked << data.Up, data.Uf, data.Yp, data.Yf;
    Eigen::JacobiSVD<Mat> svd(stacked, Eigen::ComputeThinV);
    const Vec& sv = svd.singularValues();
    Index rank = 0;
    for (Index i = 0; i < sv.size(); ++i)
        if (sv(i) > 1e-12 * sv(0))
            ++rank;
    detail::require(rank >= 1, "DeepcController: data blocks are all zero");
    V_ = svd.matrixV().leftCols(rank);

    UpV_ = data.Up * V_;
    UfV_ = data.Uf * V_;
    YpV_ = data.Yp * V_;
    YfV_ = data.Yf * V_;

    QpProblem reduced;
    reduced.P = YfV_.transpose() * pqp_.Qblk * YfV_ + UfV_.transpose() * pqp_.Rblk * UfV_ +
                cfg_.lambda_y * YpV_.transpose() * YpV_ +
                cfg_.lambda_g * Mat::Identity(rank, rank);
    reduced.P = ((reduced.P + reduced.P.transpose()) / 2.0).eval();
    reduced.q = Vec::Zero(rank);
    reduced.Aeq = UpV_;
    reduced.beq = Vec::Zero(UpV_.rows());
    reduced.Ain.resize(pqp_.Ain.rows(), rank);
    reduced.Ain << UfV_, -UfV_, YfV_, -YfV_;
    reduced.bin = pqp_.bin;

    Gr_ = V_.transpose() * pqp_.G;

    try {
        solver_ = std::make_unique<ActiveSetQp>(reduced, qp_opts_);
    } catch (const ContractError&) {
        throw ContractError(
            "DeepcController: the reduced program is not strictly convex; set "
            "lambda_g > 0 or check that the input data is persistently exciting");
    }
}

DeepcStep DeepcController::step_standard(const Vec& r_window, const Vec& u_p,
                                         const Vec& y_p)
{
    return step_impl(r_window, u_p, y_p, false);
}

DeepcStep DeepcController::step_ekf(const Vec& r_window, const Vec& u_p,
                                    const Vec& z_hat)
{
    return step_impl(r_window, u_p, z_hat, true);
}

DeepcStep DeepcController::step_impl(const Vec& r_window, const Vec& u_p,
                                     const Vec& past, bool want_law)
{
    const int m = pqp_.data.m;
    const Index zdim = static_cast<Index>(pqp_.data.p) * cfg_.Np;
    const Index udim = static_cast<Index>(m) * cfg_.Np;
    detail::require(past.size() == zdim, "deepc step: past-output window size mismatch");
    detail::require(u_p.size() == udim, "deepc step: past-input window size mismatch");

    Vec theta(pqp_.theta_dim);
    theta << past, u_p;
    Vec q_reduced = Gr_ * theta - YfV_.transpose() * (pqp_.Qblk * r_window);

    DeepcStep out;
    QpSolution sol;
    solver_->update_linear_terms(q_reduced, u_p);
    try {
        sol = solver_->solve(warm_hint_);
        warm_hint_ = sol.active_set;
    } catch (const QpInfeasible&) {
        // Retry once with the output bounds widened tenfold; the input
        // bounds stay hard and later steps see the original bounds again.
        Vec wide = pqp_.bin;
        wide.tail(2 * YfV_.rows()) *= 10.0;
        solver_->update_inequality_bounds(std::move(wide));
        sol = solver_->solve();
        solver_->update_inequality_bounds(pqp_.bin);
        out.fallback_used = true;
        ++fallbacks_;
    }

    out.g_star = V_ * sol.g_star;
    out.y_pred = YfV_ * sol.g_star;
    out.objective = sol.objective + pqp_.constant_term(theta, r_window);

    Vec u_future = UfV_ * sol.g_star;
    out.u_applied.reserve(static_cast<std::size_t>(cfg_.Nc) + 1);
    for (int i = 0; i <= cfg_.Nc; ++i)
        out.u_applied.push_back(u_future.segment(static_cast<Index>(i) * m, m));

    if (want_law) {
        AffineLaw reduced_law = solver_->affine_law(Gr_, pqp_.Beq, sol, theta);
        out.law.A_tilde = V_ * reduced_law.A_tilde;
        out.law.h_tilde = V_ * reduced_law.h_tilde;
        out.law.region_active_set = std::move(reduced_law.region_active_set);
        out.law.degenerate = reduced_law.degenerate;
        out.has_law = true;
    }
    return out;
}

namespace {

DeepcStep one_shot_step(const ParametricQp& pqp, const DataBlocks& data,
                        const DeePCConfig& cfg, const Vec& r_window, const Vec& u_p,
                        const Vec& past, bool want_law)
{
    detail::require(pqp.d == data.L,
                    "deepc step: program and data blocks disagree on dimension");
    DeepcController controller(data, cfg);
    return want_law ? controller.step_ekf(r_window, u_p, past)
                    : controller.step_standard(r_window, u_p, past);
}

} // namespace

DeepcStep deepc_step_standard(const ParametricQp& pqp, const DataBlocks& data,
                              const DeePCConfig& cfg, const Vec& r_window,
                              const Vec& u_p, const Vec& y_p)
{
    return one_shot_step(pqp, data, cfg, r_window, u_p, y_p, false);
}

DeepcStep deepc_step_ekf(const ParametricQp& pqp, const DataBlocks& data,
                         const DeePCConfig& cfg, const Vec& r_window, const Vec& u_p,
                         const Vec& z_hat)
{
    return one_shot_step(pqp, data, cfg, r_window, u_p, z_hat, true);
}

} // namespace ddpc
