#pragma once

#include "ddpc/hankel.hpp"
#include "ddpc/qp.hpp"
#include "ddpc/types.hpp"

#include <memory>
#include <vector>

namespace ddpc {

/// Tuning of the data-driven tracking program.
struct DeePCConfig {
    int Np = 3; ///< past-window horizon
    int Nf = 5; ///< prediction horizon
    int Nc = 0; ///< extra inputs applied per solve (0..Nf-1)
    Mat Q;      ///< p x p output tracking weight (PSD)
    Mat R;      ///< m x m input weight (PD)
    double lambda_y = 1.0; ///< soft past-output matching weight
    double lambda_g = 1.0; ///< ridge on the combination vector g
    Vec u_min, u_max;      ///< input box bounds (m-vectors)
    Vec y_min, y_max;      ///< output box bounds (p-vectors)

    /// Validates against the plant dimensions. Throws ContractError.
    void validate(int m, int p) const;
};

/// Condensed parametric program
///   min_g (1/2) g' P g + (G theta + q_k)' g
///   s.t.  Up g = Beq theta,  Ain g <= bin
/// with theta = col(past outputs or their estimate, past inputs). The
/// constant terms theta' H theta + (1/2) r' Qblk r complete the original
/// tracking objective and are carried for reporting only.
struct ParametricQp {
    Mat P;    // d x d
    Mat G;    // d x theta_dim
    Mat H;    // theta_dim x theta_dim, constant-term weight
    Mat Beq;  // (m Np) x theta_dim
    Mat Ain;  // (2 m Nf + 2 p Nf) x d
    Vec bin;
    Mat Qblk; // (p Nf) x (p Nf) stacked output weight
    Mat Rblk; // (m Nf) x (m Nf) stacked input weight
    DataBlocks data;
    Index d = 0;
    Index theta_dim = 0;

    /// Reference-dependent linear cost q_k(r) = -Yf' Qblk r.
    Vec linear_cost(const Vec& r_window) const;
    /// theta' H theta + (1/2) r' Qblk r.
    double constant_term(const Vec& theta, const Vec& r_window) const;
};

/// Builds the condensed program from the data blocks. Requires lambda_g > 0
/// or data rich enough to make P positive definite.
ParametricQp assemble_parametric_qp(const DataBlocks& data, const DeePCConfig& cfg);

/// Row map extracting the next output window from g: the past-output block
/// shifted one step with the first predicted output appended.
struct PredictionMap {
    Mat M; // (p Np) x d
    int p = 0;
    int Np = 0;
};

PredictionMap prediction_map(const DataBlocks& data, const DeePCConfig& cfg);

/// Output of one receding-horizon solve.
struct DeepcStep {
    std::vector<Vec> u_applied; ///< the first Nc+1 optimal inputs
    Vec g_star;                 ///< optimizer in the full d-dimensional space
    Vec y_pred;                 ///< implicit output prediction Yf g*
    double objective = 0.0;     ///< tracking objective including constants
    AffineLaw law;              ///< optimizer sensitivity (estimator variant)
    bool has_law = false;
    bool fallback_used = false; ///< output bounds were widened to recover
};

/// Receding-horizon solver bound to one data set and configuration.
///
/// Internally the program is reduced onto the row space of the stacked data
/// matrix: directions of g invisible to all four data blocks are penalized
/// only by the ridge and are exactly zero at the optimum (every linear-cost
/// and constraint row lies in that row space), so the reduced program has the
/// same optimizer, multipliers, objective, and sensitivities while staying
/// well conditioned even when lambda_y/lambda_g spans many decades.
class DeepcController {
public:
    DeepcController(const DataBlocks& data, DeePCConfig cfg, QpOptions qp_opts = {});

    const ParametricQp& program() const { return pqp_; }
    const PredictionMap& map() const { return map_; }
    const DeePCConfig& config() const { return cfg_; }

    /// Standard variant: the past-output parameter is the raw measurement
    /// window y_p.
    DeepcStep step_standard(const Vec& r_window, const Vec& u_p, const Vec& y_p);

    /// Estimator variant: the past-output parameter is the filtered estimate
    /// z_hat; also differentiates the optimizer for the filter's predict step.
    DeepcStep step_ekf(const Vec& r_window, const Vec& u_p, const Vec& z_hat);

    /// Number of solves that needed the widened-output-bounds retry.
    int fallback_count() const { return fallbacks_; }

private:
    DeepcStep step_impl(const Vec& r_window, const Vec& u_p, const Vec& past,
                        bool want_law);

    DeePCConfig cfg_;
    QpOptions qp_opts_;
    ParametricQp pqp_;
    PredictionMap map_;

    Mat V_;                       // d x r row-space basis
    Mat UpV_, UfV_, YpV_, YfV_;   // reduced data blocks
    Mat Gr_;                      // reduced parametric linear map
    std::unique_ptr<ActiveSetQp> solver_;
    std::vector<int> warm_hint_;
    int fallbacks_ = 0;
};

/// One-shot convenience wrappers matching the controller's two variants.
DeepcStep deepc_step_standard(const ParametricQp& pqp, const DataBlocks& data,
                              const DeePCConfig& cfg, const Vec& r_window,
                              const Vec& u_p, const Vec& y_p);
DeepcStep deepc_step_ekf(const ParametricQp& pqp, const DataBlocks& data,
                         const DeePCConfig& cfg, const Vec& r_window, const Vec& u_p,
                         const Vec& z_hat);

} // namespace ddpc
