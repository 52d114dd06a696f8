#include "ddpc/ekf.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <sstream>

namespace ddpc {

void EkfState::validate() const
{
    detail::require(P.rows() == P.cols() && P.rows() == z_hat.size(),
                    "EkfState: covariance shape does not match the mean");
    const double scale = std::max(1.0, P.cwiseAbs().maxCoeff());
    detail::require((P - P.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * scale,
                    "EkfState: covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(P, Eigen::EigenvaluesOnly);
    const double floor = -1e-10 * std::max(P.trace(), 1e-30);
    if (es.eigenvalues().minCoeff() < floor) {
        std::ostringstream msg;
        msg << "EkfState: covariance lost positive semidefiniteness (lambda_min = "
            << es.eigenvalues().minCoeff() << ")";
        throw ContractError(msg.str());
    }
}

ImplicitDynamics implicit_dynamics(const PredictionMap& map, const AffineLaw& law)
{
    const Index zdim = static_cast<Index>(map.p) * map.Np;
    detail::require(law.A_tilde.rows() == map.M.cols(),
                    "implicit_dynamics: law dimension does not match the map");
    detail::require(law.A_tilde.cols() >= zdim,
                    "implicit_dynamics: the law must be parameterized by (z, u_p)");

    ImplicitDynamics dyn;
    dyn.A_k = map.M * law.A_tilde.leftCols(zdim);
    dyn.B_k = map.M * law.A_tilde.rightCols(law.A_tilde.cols() - zdim);
    dyn.h_k = map.M * law.h_tilde;
    dyn.C_sel = Mat::Zero(map.p, zdim);
    dyn.C_sel.rightCols(map.p) = Mat::Identity(map.p, map.p);
    return dyn;
}

EkfState ekf_init(const Vec& y_window, double P0_scale, int k0)
{
    detail::require(y_window.size() >= 1, "ekf_init: empty measurement window");
    detail::require(P0_scale >= 0.0, "ekf_init: P0_scale must be nonnegative");
    EkfState state;
    state.z_hat = y_window;
    state.P = P0_scale * Mat::Identity(y_window.size(), y_window.size());
    state.k = k0;
    return state;
}

std::pair<Vec, Mat> ekf_predict(const EkfState& state, const ImplicitDynamics& dyn,
                                const Vec& u_p, const EkfNoise& noise)
{
    const Index zdim = state.z_hat.size();
    detail::require(dyn.A_k.rows() == zdim && dyn.A_k.cols() == zdim,
                    "ekf_predict: A_k shape mismatch");
    detail::require(dyn.B_k.rows() == zdim && dyn.B_k.cols() == u_p.size(),
                    "ekf_predict: B_k shape mismatch");
    detail::require(noise.Qk.rows() == zdim && noise.Qk.cols() == zdim,
                    "ekf_predict: Qk shape mismatch");

    Vec z_pred = dyn.A_k * state.z_hat + dyn.B_k * u_p + dyn.h_k;
    Mat P_pred = dyn.A_k * state.P * dyn.A_k.transpose() + noise.Qk;
    P_pred = ((P_pred + P_pred.transpose()) / 2.0).eval();
    return {std::move(z_pred), std::move(P_pred)};
}

EkfState ekf_update(const Vec& z_pred, const Mat& P_pred, const Vec& y_meas,
                    const ImplicitDynamics& dyn, const EkfNoise& noise, int k_next)
{
    const Index zdim = z_pred.size();
    const Index p = dyn.C_sel.rows();
    detail::require(y_meas.size() == p, "ekf_update: measurement dimension mismatch");
    detail::require(noise.Rk.rows() == p && noise.Rk.cols() == p,
                    "ekf_update: Rk shape mismatch");

    Mat S = dyn.C_sel * P_pred * dyn.C_sel.transpose() + noise.Rk;
    Eigen::LLT<Mat> llt(((S + S.transpose()) / 2.0).eval());
    if (llt.info() != Eigen::Success)
        throw std::runtime_error(
            "ekf_update: innovation covariance is singular; Rk must be positive "
            "definite");

    Mat K = llt.solve(dyn.C_sel * P_pred).transpose(); // zdim x p
    Vec innovation = y_meas - dyn.C_sel * z_pred;

    EkfState next;
    next.z_hat = z_pred + K * innovation;
    Mat IKC = Mat::Identity(zdim, zdim) - K * dyn.C_sel;
    next.P = IKC * P_pred * IKC.transpose() + K * noise.Rk * K.transpose();
    next.P = ((next.P + next.P.transpose()) / 2.0).eval();
    next.k = k_next;
    return next;
}

} // namespace ddpc
