#pragma once

#include "ddpc/deepc.hpp"
#include "ddpc/qp.hpp"
#include "ddpc/types.hpp"

#include <utility>

namespace ddpc {

/// Filtered belief over the fictitious state z_k, the stacked window of the
/// last Np outputs.
struct EkfState {
    Vec z_hat; ///< filtered mean
    Mat P;     ///< filtered covariance
    int k = 0; ///< step counter

    /// Checks symmetry and positive semidefiniteness of P (smallest
    /// eigenvalue above -1e-10 * trace). Throws ContractError.
    void validate() const;
};

struct EkfNoise {
    Mat Qk; ///< (p Np) x (p Np) process-noise covariance, PSD
    Mat Rk; ///< p x p measurement-noise covariance, PD
};

/// Linearized window dynamics z_{k+1} = A_k z_k + B_k u_p + h_k with the
/// newest output read off by C_sel = [0 ... 0 I_p].
struct ImplicitDynamics {
    Mat A_k;   // (p Np) x (p Np)
    Mat B_k;   // (p Np) x (m Np)
    Vec h_k;   // p Np
    Mat C_sel; // p x (p Np)
};

/// Composes the prediction map with an optimizer sensitivity law to get the
/// window dynamics the filter linearizes around.
ImplicitDynamics implicit_dynamics(const PredictionMap& map, const AffineLaw& law);

/// Starts the filter from the first Np raw measurements (stacked oldest
/// first) with covariance P0_scale * I.
EkfState ekf_init(const Vec& y_window, double P0_scale, int k0 = 0);

/// Time update: propagates mean and covariance through the current implicit
/// dynamics. Returns (z_pred, P_pred) with P_pred symmetrized.
std::pair<Vec, Mat> ekf_predict(const EkfState& state, const ImplicitDynamics& dyn,
                                const Vec& u_p, const EkfNoise& noise);

/// Measurement update with the newest output. Joseph-form covariance update;
/// requires the innovation covariance to be invertible (Rk PD guarantees it).
EkfState ekf_update(const Vec& z_pred, const Mat& P_pred, const Vec& y_meas,
                    const ImplicitDynamics& dyn, const EkfNoise& noise, int k_next);

} // namespace ddpc
