#pragma once

#include "ddpc/deepc.hpp"
#include "ddpc/ekf.hpp"
#include "ddpc/hankel.hpp"
#include "ddpc/lti_sim.hpp"
#include "ddpc/qp.hpp"
#include "ddpc/types.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ddpc {

/// Sinusoidal tracking reference r_k = amplitude * sin(omega * k), replicated
/// across all output channels.
struct ReferenceSpec {
    double amplitude = 5.0;
    double omega = 0.3;

    Vec value(int p, int k) const;
    /// col(r_{first_k}, ..., r_{first_k + length - 1}).
    Vec window(int p, int first_k, int length) const;
};

enum class Variant { Standard, Averaged, AveragedEkf, MpcOracle };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

/// Filter covariance knobs. The window advances by shifting its aged entries
/// (nearly exact, small shift_scale) while only the newest slot absorbs real
/// process noise, so the two get separate scales. Negative scales mean "derive
/// from the plant": process from sigma_w2 * tr(C C^T)/p, measurement from
/// sigma_v2 (0.1 when the plant is noise-free).
struct EkfTuning {
    double process_scale = -1.0;
    double shift_scale = 1e-4;
    double measurement_scale = -1.0;
    double initial_scale = 1.0;

    double resolved_process_scale(double sigma_w2, const Mat& C) const;
    double resolved_measurement_scale(double sigma_v2) const;
};

/// Everything one closed-loop experiment family needs. The same noise spec
/// drives offline data collection and the online plant; seeds are derived per
/// repetition from the master seed, so the config is the full reproducibility
/// artifact.
struct ExperimentConfig {
    LtiModel model;
    NoiseSpec noise; ///< seed field unused; streams derive from master_seed
    DeePCConfig deepc;
    int T = 100;     ///< offline trajectory length
    int N = 40;      ///< datasets averaged into one data matrix
    int Nsim = 100;  ///< closed-loop steps counted in the cost
    ReferenceSpec reference;
    Variant variant = Variant::Standard;
    int repetitions = 100;
    int tuning_repetitions = 20;
    std::uint64_t master_seed = 1;
    std::vector<double> lambda_y_grid;
    std::vector<double> lambda_g_grid;
    /// Runs the plant without noise while the offline data keeps the
    /// configured noise (isolates the effect of data averaging).
    bool noise_free_online = false;
    /// Excitation scale for offline data collection. The noisy benchmark
    /// keeps it at 1 so the data noise stays visible; the averaging-trend
    /// experiment raises it (see configs/data_averaging_sweep.json).
    double pe_amplitude = 1.0;
    /// Warm-up excitation; negative means "same as pe_amplitude". Kept
    /// moderate by default so the initial transient does not dominate J.
    double warmup_amplitude = 1.0;
    double x0_stddev = 0.0; ///< initial-state spread of dataset members
    EkfTuning ekf;

    void validate() const;
};

/// Config preloaded with the two-state benchmark plant and the defaults all
/// experiments share.
ExperimentConfig default_experiment_config();

struct FilterDiagnostics {
    double innovation_norm = 0.0;
    double gain_norm = 0.0;
    double trace_P = 0.0;
};

struct ExperimentResult {
    double J = 0.0;
    std::vector<Vec> inputs;    ///< applied inputs, steps 1..Nsim
    std::vector<Vec> outputs;   ///< measured outputs, steps 1..Nsim
    std::vector<Vec> reference; ///< tracked reference, steps 1..Nsim
    std::vector<FilterDiagnostics> filter; ///< per step, estimator variant only
    double lambda_y = 0.0;
    double lambda_g = 0.0;
    std::uint64_t seed = 0; ///< derived data-stream seed of this repetition
    int rep = 0;
    Variant variant = Variant::Standard;
    int fallback_count = 0;
    int degenerate_law_steps = 0;
    bool failed = false;
    std::string failure_reason;
};

/// Recomputes the closed-loop cost from the stored trajectories; must equal
/// the stored J exactly.
double closed_loop_cost(const ExperimentResult& result, const Mat& Q, const Mat& R);

/// Collects the offline trajectories of one repetition (one member for the
/// standard variant, N for the averaged ones), all under the same excitation.
std::vector<Trajectory> collect_experiment_data(const ExperimentConfig& cfg, int rep);

/// collect_experiment_data + block assembly and averaging. The past-output
/// rows are paired one step ahead of the past-input rows so the prediction
/// map advances the measurement window exactly one plant step.
DataBlocks prepare_data(const ExperimentConfig& cfg, int rep);

/// Observation port called once per applied input with the true plant state
/// at decision time; used for equivalence checks against the oracle.
struct StepContext {
    int k = 0; ///< 1-based closed-loop step
    Vec x_true;
    Vec u;
    Vec r_window;
};
using StepObserver = std::function<void(const StepContext&)>;

/// Simulates the plant under the configured controller for Nsim steps after
/// an Np-step excitation warm-up shared by all variants. QP infeasibility
/// surviving the widened retry marks the run failed instead of throwing.
ExperimentResult run_closed_loop(const ExperimentConfig& cfg, const DataBlocks& data,
                                 int rep, const StepObserver& observer = {});

/// prepare_data + run_closed_loop; the oracle variant skips data collection.
ExperimentResult run_experiment(const ExperimentConfig& cfg, int rep,
                                const StepObserver& observer = {});

/// Finite-horizon tracking controller built from the true model with full
/// state measurement; the comparison baseline. Shares the data-driven
/// controller's weights, bounds, and widened-output-bounds retry.
class MpcOracle {
public:
    MpcOracle(const LtiModel& model, DeePCConfig cfg, QpOptions qp_opts = {});

    /// First optimal input.
    Vec step(const Vec& x_true, const Vec& r_window);
    /// Whole optimal input sequence (m*Nf entries).
    Vec step_sequence(const Vec& x_true, const Vec& r_window);

    int fallback_count() const { return fallbacks_; }
    /// Maps the current state to the predicted output window.
    const Mat& state_predictor() const { return Phi_; }
    /// Maps the planned inputs to the predicted output window.
    const Mat& input_predictor() const { return Gamma_; }

private:
    LtiModel model_;
    DeePCConfig cfg_;
    Mat Phi_, Gamma_;
    Mat Qblk_;
    Vec u_bounds_; // stacked col(u_max rows, -u_min rows), input rows of bin
    Vec y_max_rep_, y_min_rep_;
    std::unique_ptr<ActiveSetQp> solver_;
    std::vector<int> warm_hint_;
    int fallbacks_ = 0;
};

/// One-shot convenience wrapper returning the first optimal input.
Vec mpc_oracle(const LtiModel& model, const DeePCConfig& cfg, const Vec& x_true,
               const Vec& r_window);

/// Aggregate statistics of repeated runs of one variant at fixed tuning.
/// `costs` is repetition-aligned with NaN marking failed runs, so vectors
/// from different variants at the same config pair up by index.
struct VariantStats {
    Variant variant = Variant::Standard;
    double lambda_y = 0.0;
    double lambda_g = 0.0;
    int repetitions = 0;
    int n_ok = 0;
    int n_failed = 0;
    std::vector<double> costs;
    double mean = 0.0;
    double stddev = 0.0;
    double q25 = 0.0;
    double median = 0.0;
    double q75 = 0.0;
    long fallbacks_total = 0;
    bool valid = true; ///< at most 5% failed runs
};

VariantStats monte_carlo(const ExperimentConfig& cfg, int jobs = 1);

/// Paired one-sided comparison of two repetition-aligned cost vectors.
struct PairedComparison {
    int pairs = 0;        ///< repetitions where both runs succeeded
    double mean_diff = 0.0; ///< mean(a - b) over pairs
    int wins_a = 0;       ///< #{a > b}, ties excluded from the test
    double p_value = 1.0; ///< sign test against "a exceeds b no more than chance"
};
PairedComparison paired_compare(const VariantStats& a, const VariantStats& b);

struct LambdaCell {
    double lambda_y = 0.0;
    double lambda_g = 0.0;
    double mean_J = 0.0;
    int n_ok = 0;
    int n_failed = 0;
    bool valid = true;
};
struct LambdaTable {
    std::vector<LambdaCell> cells;
    double best_lambda_y = 0.0;
    double best_lambda_g = 0.0;
};

/// Exhaustive grid search of the regularization weights over
/// cfg.tuning_repetitions paired runs per cell; ties break toward smaller
/// (lambda_g, lambda_y). Data is collected once per repetition and shared
/// across cells.
LambdaTable sweep_lambda(const ExperimentConfig& cfg, int jobs = 1);

enum class SweepParameter { SigmaV2, SigmaW2, PastHorizon, AveragedCount };

const char* sweep_parameter_name(SweepParameter p);
SweepParameter sweep_parameter_from_name(const std::string& name);
ExperimentConfig apply_parameter(ExperimentConfig cfg, SweepParameter param,
                                 double value);

struct SweepPoint {
    double value = 0.0;
    VariantStats stats;
};

/// Evaluates each grid point for each variant, re-tuning lambda per point
/// (the oracle has nothing to tune). Returns grid-major, variant-minor.
std::vector<SweepPoint> sweep_parameter(const ExperimentConfig& base,
                                        SweepParameter param,
                                        const std::vector<double>& grid,
                                        const std::vector<Variant>& variants,
                                        int jobs = 1);

} // namespace ddpc
