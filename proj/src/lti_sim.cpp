#include "ddpc/lti_sim.hpp"

#include "ddpc/hankel.hpp"

#include <cmath>
#include <sstream>

namespace ddpc {

namespace {

void check_model(const LtiModel& model)
{
    const int n = model.n, m = model.m, p = model.p;
    detail::require(n >= 1 && m >= 1 && p >= 1, "LtiModel: dimensions must be >= 1");

    std::ostringstream msg;
    auto expect = [&](const Mat& M, int rows, int cols, const char* name) {
        if (M.rows() != rows || M.cols() != cols) {
            msg << "LtiModel: " << name << " must be " << rows << "x" << cols
                << ", got " << M.rows() << "x" << M.cols();
            throw ContractError(msg.str());
        }
    };
    expect(model.A, n, n, "A");
    expect(model.B, n, m, "B");
    expect(model.C, p, n, "C");
    expect(model.D, p, m, "D");
    expect(model.E, n, n, "E");
    expect(model.F, p, p, "F");
}

} // namespace

LtiModel LtiModel::make(Mat A, Mat B, Mat C, Mat D)
{
    const int n = static_cast<int>(A.rows());
    const int p = static_cast<int>(C.rows());
    return make(std::move(A), std::move(B), std::move(C), std::move(D),
                Mat::Identity(n, n), Mat::Identity(p, p));
}

LtiModel LtiModel::make(Mat A, Mat B, Mat C, Mat D, Mat E, Mat F)
{
    LtiModel model;
    model.n = static_cast<int>(A.rows());
    model.m = static_cast<int>(B.cols());
    model.p = static_cast<int>(C.rows());
    model.A = std::move(A);
    model.B = std::move(B);
    model.C = std::move(C);
    model.D = std::move(D);
    model.E = std::move(E);
    model.F = std::move(F);
    check_model(model);
    return model;
}

std::pair<Vec, Vec> step(const LtiModel& model, const Vec& x, const Vec& u,
                         const Vec& w, const Vec& v)
{
    if (x.size() != model.n || u.size() != model.m || w.size() != model.n ||
        v.size() != model.p) {
        std::ostringstream msg;
        msg << "step: dimension mismatch (x " << x.size() << ", u " << u.size()
            << ", w " << w.size() << ", v " << v.size() << " for n=" << model.n
            << ", m=" << model.m << ", p=" << model.p << ")";
        throw ContractError(msg.str());
    }
    Vec y = model.C * x + model.D * u + v;
    Vec x_next = model.A * x + model.B * u + w;
    return {std::move(x_next), std::move(y)};
}

Trajectory simulate(const LtiModel& model, const Vec& x0,
                    const std::vector<Vec>& inputs, const NoiseSpec& noise)
{
    detail::require(!inputs.empty(), "simulate: input sequence must be nonempty");
    detail::require(noise.sigma_w2 >= 0.0 && noise.sigma_v2 >= 0.0,
                    "simulate: noise variances must be nonnegative");
    detail::require(x0.size() == model.n, "simulate: x0 dimension mismatch");

    const double sw = std::sqrt(noise.sigma_w2);
    const double sv = std::sqrt(noise.sigma_v2);
    RngStream rng(noise.seed);

    Trajectory traj;
    traj.inputs = inputs;
    traj.outputs.reserve(inputs.size());
    traj.states.reserve(inputs.size());

    Vec x = x0;
    for (const Vec& u : inputs) {
        // Per step the process-noise sample is drawn before the
        // measurement-noise sample; this ordering is part of the
        // reproducibility contract.
        Vec w = model.E * (sw * rng.gaussian_vector(model.n));
        Vec v = model.F * (sv * rng.gaussian_vector(model.p));
        traj.states.push_back(x);
        auto [x_next, y] = step(model, x, u, w, v);
        traj.outputs.push_back(std::move(y));
        x = std::move(x_next);
    }
    return traj;
}

std::vector<Vec> generate_pe_input(int m, int T, int order, double amplitude,
                                   std::uint64_t seed, int max_retries)
{
    detail::require(m >= 1 && order >= 1, "generate_pe_input: m and order must be >= 1");
    if (T < (m + 1) * order - 1) {
        std::ostringstream msg;
        msg << "generate_pe_input: T=" << T << " is below the necessary length "
            << (m + 1) * order - 1 << " for persistency of excitation of order "
            << order << " with m=" << m;
        throw ContractError(msg.str());
    }

    RngStream rng(seed);
    for (int attempt = 0; attempt < max_retries; ++attempt) {
        std::vector<Vec> u;
        u.reserve(T);
        for (int k = 0; k < T; ++k)
            u.push_back(rng.uniform_vector(m, -amplitude, amplitude));
        if (is_persistently_exciting(build_block_hankel(u, order)))
            return u;
    }
    std::ostringstream msg;
    msg << "generate_pe_input: failed to produce an input of excitation order "
        << order << " after " << max_retries << " attempts";
    throw std::runtime_error(msg.str());
}

X0Sampler gaussian_x0_sampler(int n, double stddev)
{
    return [n, stddev](RngStream& rng) -> Vec {
        if (stddev == 0.0)
            return Vec::Zero(n);
        return stddev * rng.gaussian_vector(n);
    };
}

std::vector<Trajectory> collect_dataset(const LtiModel& model, int N,
                                        const std::vector<Vec>& input,
                                        const X0Sampler& x0_sampler,
                                        const NoiseSpec& noise)
{
    detail::require(N >= 1, "collect_dataset: N must be >= 1");
    std::vector<Trajectory> dataset;
    dataset.reserve(N);
    for (int i = 0; i < N; ++i) {
        const auto ui = static_cast<std::uint64_t>(i);
        RngStream x0_rng(noise.seed, {0x1057ULL, ui});
        NoiseSpec member = noise;
        member.seed = derive_seed(noise.seed, {0x51ULL, ui});
        dataset.push_back(simulate(model, x0_sampler(x0_rng), input, member));
    }
    return dataset;
}

ModelStructure model_structure_matrices(const LtiModel& model, int Np, int Nf)
{
    detail::require(Np >= 1 && Nf >= 1, "model_structure_matrices: horizons must be >= 1");
    const int n = model.n, m = model.m, p = model.p;
    const int W = Np + Nf;

    // Full-window observability matrix col(C, CA, ..., CA^{W-1}) and the
    // matching block-Toeplitz of Markov parameters; the past/future pieces
    // are row slices of these.
    Mat obs(p * W, n);
    Mat toe = Mat::Zero(p * W, m * W);
    Mat Apow = Mat::Identity(n, n);
    std::vector<Mat> markov; // markov[j] = C A^{j-1} B for j >= 1
    markov.reserve(W);
    for (int i = 0; i < W; ++i) {
        obs.middleRows(i * p, p) = model.C * Apow;
        markov.push_back(model.C * Apow * model.B);
        Apow = model.A * Apow;
    }
    for (int i = 0; i < W; ++i) {
        toe.block(i * p, i * m, p, m) = model.D;
        for (int j = 0; j < i; ++j)
            toe.block(i * p, j * m, p, m) = markov[i - j - 1];
    }

    ModelStructure s;
    s.Op = obs.topRows(p * Np);
    s.Of = obs.bottomRows(p * Nf);
    s.Tp = toe.topRows(p * Np);
    s.Tf = toe.bottomRows(p * Nf);
    return s;
}

} // namespace ddpc
