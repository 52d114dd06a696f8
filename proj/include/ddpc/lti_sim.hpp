#pragma once

#include "ddpc/rng.hpp"
#include "ddpc/types.hpp"

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

namespace ddpc {

/// Discrete-time stochastic LTI plant
///
///   x_{k+1} = A x_k + B u_k + E w_k
///   y_k     = C x_k + D u_k + F v_k
///
/// with w_k ~ N(0, sigma_w^2 I_n) and v_k ~ N(0, sigma_v^2 I_p) drawn by
/// the simulator. E and F default to identity.
struct LtiModel {
    Mat A, B, C, D, E, F;
    int n = 0, m = 0, p = 0;

    static LtiModel make(Mat A, Mat B, Mat C, Mat D);
    static LtiModel make(Mat A, Mat B, Mat C, Mat D, Mat E, Mat F);
};

/// Input/output record of one experiment. States are kept when the
/// simulator produced them; they are only ever used as a test oracle.
struct Trajectory {
    std::vector<Vec> inputs;
    std::vector<Vec> outputs;
    std::vector<Vec> states;

    int length() const { return static_cast<int>(inputs.size()); }
};

struct NoiseSpec {
    double sigma_w2 = 0.0; ///< process-noise variance (per state component)
    double sigma_v2 = 0.0; ///< measurement-noise variance (per output component)
    std::uint64_t seed = 0;
};

/// One plant step with explicit noise samples. The output is formed from
/// the pre-update state.
std::pair<Vec, Vec> step(const LtiModel& model, const Vec& x, const Vec& u,
                         const Vec& w, const Vec& v);

/// Simulates the plant over the given input sequence with Gaussian noise
/// drawn from a stream seeded by `noise.seed`. Deterministic per seed.
Trajectory simulate(const LtiModel& model, const Vec& x0,
                    const std::vector<Vec>& inputs, const NoiseSpec& noise);

/// I.i.d. uniform samples on [-amplitude, amplitude]^m, re-drawn until the
/// sequence is persistently exciting of the requested order. Requires
/// T >= (m+1)*order - 1, the necessary length for that order.
std::vector<Vec> generate_pe_input(int m, int T, int order, double amplitude,
                                   std::uint64_t seed, int max_retries = 16);

using X0Sampler = std::function<Vec(RngStream&)>;

/// Zero-mean Gaussian initial-state sampler with the given per-component
/// standard deviation.
X0Sampler gaussian_x0_sampler(int n, double stddev);

/// Runs N experiments that all apply the identical input sequence, each
/// with its own initial state and noise realization. Per-experiment
/// streams are derived from noise.seed, so the dataset is reproducible
/// and members may be simulated in parallel.
std::vector<Trajectory> collect_dataset(const LtiModel& model, int N,
                                        const std::vector<Vec>& input,
                                        const X0Sampler& x0_sampler,
                                        const NoiseSpec& noise);

/// Extended observability and block-Toeplitz impulse-response matrices of
/// the model over a past/future window split. Test oracle for the data
/// matrix factorization; not used by any controller at runtime.
struct ModelStructure {
    Mat Op; ///< col(C, CA, ..., CA^{Np-1})
    Mat Of; ///< col(CA^{Np}, ..., CA^{Np+Nf-1})
    Mat Tp; ///< first Np block-rows of the impulse-response Toeplitz matrix
    Mat Tf; ///< remaining Nf block-rows
};

ModelStructure model_structure_matrices(const LtiModel& model, int Np, int Nf);

} // namespace ddpc
