#include "ddpc/harness.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace ddpc {

namespace {

constexpr std::uint64_t kDataStream = 0xD47A;
constexpr std::uint64_t kPlantStream = 0x714E;
constexpr std::uint64_t kWarmupStream = 0x3A12;
constexpr std::uint64_t kPeStream = 0x9E1D;

const double kNaN = std::numeric_limits<double>::quiet_NaN();

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

/// Runs fn(0..n-1), on worker threads when jobs > 1. Each index owns its
/// output slot, so the result does not depend on scheduling.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn)
{
    if (n <= 0)
        return;
    const int workers = std::min(jobs, n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto body = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n)
                return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error)
                    first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back(body);
    for (auto& t : pool)
        t.join();
    if (first_error)
        std::rethrow_exception(first_error);
}

double stage_cost(const Mat& Q, const Mat& R, const Vec& y, const Vec& r, const Vec& u)
{
    const Vec e = y - r;
    return e.dot(Q * e) + u.dot(R * u);
}

/// The true plant driven online. Measurement precedes the state update each
/// step, so the current output never depends on the input being decided.
struct PlantSim {
    const LtiModel& model;
    RngStream rng;
    double w_std, v_std;
    Vec x;

    PlantSim(const LtiModel& mdl, std::uint64_t seed, double sigma_w2, double sigma_v2)
        : model(mdl), rng(seed), w_std(std::sqrt(sigma_w2)), v_std(std::sqrt(sigma_v2)),
          x(Vec::Zero(mdl.n))
    {
    }

    Vec measure()
    {
        Vec v = rng.gaussian_vector(model.p);
        return model.C * x + model.F * (v_std * v);
    }

    void advance(const Vec& u)
    {
        Vec w = rng.gaussian_vector(model.n);
        x = model.A * x + model.B * u + model.E * (w_std * w);
    }
};

/// Pure window-shift dynamics: ages the estimate one step and leaves the
/// newest entry to the measurement update. Stand-in when no usable law
/// exists yet.
ImplicitDynamics shift_dynamics(int p, int Np, int m)
{
    ImplicitDynamics dyn;
    const Index zdim = static_cast<Index>(p) * Np;
    dyn.A_k = Mat::Zero(zdim, zdim);
    if (Np > 1)
        dyn.A_k.topRightCorner(p * (Np - 1), p * (Np - 1)) =
            Mat::Identity(p * (Np - 1), p * (Np - 1));
    dyn.B_k = Mat::Zero(zdim, static_cast<Index>(m) * Np);
    dyn.h_k = Vec::Zero(zdim);
    dyn.C_sel = Mat::Zero(p, zdim);
    dyn.C_sel.rightCols(p) = Mat::Identity(p, p);
    return dyn;
}

double quantile(const std::vector<double>& sorted, double prob)
{
    if (sorted.empty())
        return kNaN;
    const double h = prob * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= sorted.size())
        return sorted.back();
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

void finalize_stats(VariantStats& s)
{
    std::vector<double> ok;
    ok.reserve(s.costs.size());
    for (double c : s.costs)
        if (!std::isnan(c))
            ok.push_back(c);
    s.n_ok = static_cast<int>(ok.size());
    s.n_failed = s.repetitions - s.n_ok;
    s.valid = 20 * s.n_failed <= s.repetitions;
    if (ok.empty()) {
        s.mean = s.stddev = s.q25 = s.median = s.q75 = kNaN;
        s.valid = false;
        return;
    }
    double sum = 0.0;
    for (double c : ok)
        sum += c;
    s.mean = sum / static_cast<double>(ok.size());
    double ss = 0.0;
    for (double c : ok)
        ss += (c - s.mean) * (c - s.mean);
    s.stddev = ok.size() > 1 ? std::sqrt(ss / static_cast<double>(ok.size() - 1)) : 0.0;
    std::sort(ok.begin(), ok.end());
    s.q25 = quantile(ok, 0.25);
    s.median = quantile(ok, 0.5);
    s.q75 = quantile(ok, 0.75);
}

/// P[Binomial(n, 1/2) >= k], exact.
double binomial_upper_tail(int n, int k)
{
    if (k <= 0)
        return 1.0;
    if (k > n)
        return 0.0;
    double p = 0.0;
    const double log_half_n = -static_cast<double>(n) * std::log(2.0);
    for (int j = k; j <= n; ++j) {
        const double log_term = std::lgamma(n + 1.0) - std::lgamma(j + 1.0) -
                                std::lgamma(n - j + 1.0) + log_half_n;
        p += std::exp(log_term);
    }
    return std::min(1.0, p);
}

} // namespace

Vec ReferenceSpec::value(int p, int k) const
{
    return Vec::Constant(p, amplitude * std::sin(omega * static_cast<double>(k)));
}

Vec ReferenceSpec::window(int p, int first_k, int length) const
{
    Vec out(static_cast<Index>(p) * length);
    for (int i = 0; i < length; ++i)
        out.segment(static_cast<Index>(p) * i, p) = value(p, first_k + i);
    return out;
}

const char* variant_name(Variant v)
{
    switch (v) {
    case Variant::Standard:
        return "standard";
    case Variant::Averaged:
        return "averaged";
    case Variant::AveragedEkf:
        return "averaged+ekf";
    case Variant::MpcOracle:
        return "mpc-oracle";
    }
    return "unknown";
}

Variant variant_from_name(const std::string& name)
{
    if (name == "standard")
        return Variant::Standard;
    if (name == "averaged")
        return Variant::Averaged;
    if (name == "averaged+ekf")
        return Variant::AveragedEkf;
    if (name == "mpc-oracle")
        return Variant::MpcOracle;
    throw ContractError("unknown variant name: " + name);
}

double EkfTuning::resolved_process_scale(double sigma_w2, const Mat& C) const
{
    if (process_scale >= 0.0)
        return process_scale;
    const double footprint =
        sigma_w2 * C.squaredNorm() / static_cast<double>(C.rows());
    return std::max(footprint, 1e-6);
}

double EkfTuning::resolved_measurement_scale(double sigma_v2) const
{
    if (measurement_scale >= 0.0)
        return measurement_scale;
    return sigma_v2 > 0.0 ? sigma_v2 : 0.1;
}

void ExperimentConfig::validate() const
{
    detail::require(model.n >= 1 && model.m >= 1 && model.p >= 1,
                    "ExperimentConfig: empty model");
    deepc.validate(model.m, model.p);
    detail::require(model.D.cwiseAbs().maxCoeff() == 0.0,
                    "ExperimentConfig: the closed loop measures the output before "
                    "choosing the input, which requires D = 0");
    const int bound = (model.m + 1) * (deepc.Np + deepc.Nf + model.n) + 1;
    if (T < bound) {
        std::ostringstream msg;
        msg << "ExperimentConfig: T = " << T << " is below the excitation bound "
            << bound << " = (m+1)(Np+Nf+n)+1";
        throw ContractError(msg.str());
    }
    detail::require(Nsim >= deepc.Np && Nsim >= 1,
                    "ExperimentConfig: Nsim must cover at least the past horizon");
    detail::require(N >= 1, "ExperimentConfig: N must be >= 1");
    detail::require(repetitions >= 1 && tuning_repetitions >= 1,
                    "ExperimentConfig: repetition counts must be >= 1");
    detail::require(noise.sigma_w2 >= 0.0 && noise.sigma_v2 >= 0.0,
                    "ExperimentConfig: noise variances must be nonnegative");
    detail::require(pe_amplitude > 0.0, "ExperimentConfig: pe_amplitude must be > 0");
    detail::require(x0_stddev >= 0.0, "ExperimentConfig: x0_stddev must be >= 0");
    detail::require(reference.amplitude >= 0.0,
                    "ExperimentConfig: reference amplitude must be >= 0");
    for (double v : lambda_y_grid)
        detail::require(v >= 0.0, "ExperimentConfig: lambda_y grid must be >= 0");
    for (double v : lambda_g_grid)
        detail::require(v > 0.0, "ExperimentConfig: lambda_g grid must be > 0");
    if (variant == Variant::AveragedEkf) {
        detail::require(deepc.Np >= 2,
                        "ExperimentConfig: the estimator variant requires Np >= 2");
        detail::require(ekf.shift_scale > 0.0 && ekf.initial_scale >= 0.0,
                        "ExperimentConfig: filter shift scale must be > 0 and the "
                        "initial scale >= 0");
        detail::require(
            ekf.resolved_process_scale(noise.sigma_w2, model.C) > 0.0 &&
                ekf.resolved_measurement_scale(noise.sigma_v2) > 0.0,
            "ExperimentConfig: the filter covariance scales must resolve to "
            "positive values");
    }
}

ExperimentConfig default_experiment_config()
{
    Mat A(2, 2), B(2, 1), C(1, 2), D(1, 1);
    A << 0.8, 1.0, 0.0, 0.8;
    B << 0.0, 1.0;
    C << 1.0, 1.0;
    D << 0.0;

    ExperimentConfig cfg;
    cfg.model = LtiModel::make(A, B, C, D);
    cfg.noise.sigma_w2 = 0.5;
    cfg.noise.sigma_v2 = 0.5;

    cfg.deepc.Np = 3;
    cfg.deepc.Nf = 5;
    cfg.deepc.Nc = 0;
    cfg.deepc.Q = Mat::Identity(1, 1);
    cfg.deepc.R = Mat::Identity(1, 1);
    cfg.deepc.lambda_y = 1.0;
    cfg.deepc.lambda_g = 1.0;
    cfg.deepc.u_min = Vec::Constant(1, -1000.0);
    cfg.deepc.u_max = Vec::Constant(1, 1000.0);
    cfg.deepc.y_min = Vec::Constant(1, -1000.0);
    cfg.deepc.y_max = Vec::Constant(1, 1000.0);

    cfg.lambda_y_grid = {0.1, 1.0, 10.0, 100.0, 1000.0, 1e4, 1e5};
    cfg.lambda_g_grid = {1e-6, 1e-4, 1e-2, 1.0, 10.0, 100.0, 1000.0};
    return cfg;
}

double closed_loop_cost(const ExperimentResult& result, const Mat& Q, const Mat& R)
{
    detail::require(result.inputs.size() == result.outputs.size() &&
                        result.inputs.size() == result.reference.size(),
                    "closed_loop_cost: trajectory lengths disagree");
    double J = 0.0;
    for (std::size_t k = 0; k < result.inputs.size(); ++k)
        J += stage_cost(Q, R, result.outputs[k], result.reference[k], result.inputs[k]);
    return J;
}

std::vector<Trajectory> collect_experiment_data(const ExperimentConfig& cfg, int rep)
{
    cfg.validate();
    const bool averaged =
        cfg.variant == Variant::Averaged || cfg.variant == Variant::AveragedEkf;
    const int members = averaged ? cfg.N : 1;
    const int order = cfg.deepc.Np + cfg.deepc.Nf + cfg.model.n;

    auto input = generate_pe_input(
        cfg.model.m, cfg.T, order, cfg.pe_amplitude,
        derive_seed(cfg.master_seed, {kPeStream, static_cast<std::uint64_t>(rep)}));

    NoiseSpec data_noise;
    data_noise.sigma_w2 = cfg.noise.sigma_w2;
    data_noise.sigma_v2 = cfg.noise.sigma_v2;
    data_noise.seed =
        derive_seed(cfg.master_seed, {kDataStream, static_cast<std::uint64_t>(rep)});

    auto sampler = gaussian_x0_sampler(cfg.model.n, cfg.x0_stddev);
    return collect_dataset(cfg.model, members, input, sampler, data_noise);
}

DataBlocks prepare_data(const ExperimentConfig& cfg, int rep)
{
    auto trajectories = collect_experiment_data(cfg, rep);

    std::vector<DataBlocks> blocks;
    blocks.reserve(trajectories.size());
    for (const auto& traj : trajectories) {
        std::vector<Vec> u_shift(traj.inputs.begin(), traj.inputs.end() - 1);
        std::vector<Vec> y_shift(traj.outputs.begin() + 1, traj.outputs.end());
        blocks.push_back(
            split_past_future(u_shift, y_shift, cfg.deepc.Np, cfg.deepc.Nf));
    }
    return average_data_blocks(blocks);
}

ExperimentResult run_closed_loop(const ExperimentConfig& cfg, const DataBlocks& data,
                                 int rep, const StepObserver& observer)
{
    cfg.validate();
    const int m = cfg.model.m, p = cfg.model.p;
    const int Np = cfg.deepc.Np, Nf = cfg.deepc.Nf;
    const bool use_ekf = cfg.variant == Variant::AveragedEkf;
    const bool use_oracle = cfg.variant == Variant::MpcOracle;

    ExperimentResult result;
    result.lambda_y = cfg.deepc.lambda_y;
    result.lambda_g = cfg.deepc.lambda_g;
    result.rep = rep;
    result.variant = cfg.variant;
    result.seed =
        derive_seed(cfg.master_seed, {kDataStream, static_cast<std::uint64_t>(rep)});
    result.inputs.reserve(static_cast<std::size_t>(cfg.Nsim));
    result.outputs.reserve(static_cast<std::size_t>(cfg.Nsim));
    result.reference.reserve(static_cast<std::size_t>(cfg.Nsim));

    const double sw = cfg.noise_free_online ? 0.0 : cfg.noise.sigma_w2;
    const double sv = cfg.noise_free_online ? 0.0 : cfg.noise.sigma_v2;
    PlantSim plant(
        cfg.model,
        derive_seed(cfg.master_seed, {kPlantStream, static_cast<std::uint64_t>(rep)}),
        sw, sv);

    // Shared warm-up: every variant sees the same excitation and therefore
    // the same plant state when control starts.
    const double wamp =
        cfg.warmup_amplitude < 0.0 ? cfg.pe_amplitude : cfg.warmup_amplitude;
    std::vector<Vec> warmup;
    if (wamp > 0.0) {
        warmup = generate_pe_input(
            m, Np, 1, wamp,
            derive_seed(cfg.master_seed, {kWarmupStream, static_cast<std::uint64_t>(rep)}));
    } else {
        warmup.assign(static_cast<std::size_t>(Np), Vec::Zero(m));
    }

    std::vector<Vec> us, ys;
    ys.push_back(plant.measure());
    for (int k = 0; k < Np; ++k) {
        plant.advance(warmup[static_cast<std::size_t>(k)]);
        us.push_back(warmup[static_cast<std::size_t>(k)]);
        ys.push_back(plant.measure());
    }

    std::unique_ptr<DeepcController> controller;
    std::unique_ptr<MpcOracle> oracle;
    if (use_oracle)
        oracle = std::make_unique<MpcOracle>(cfg.model, cfg.deepc);
    else
        controller = std::make_unique<DeepcController>(data, cfg.deepc);

    EkfState state;
    EkfNoise filter_noise;
    ImplicitDynamics dyn;
    bool have_dyn = false;
    if (use_ekf) {
        const Index zdim = static_cast<Index>(p) * Np;
        filter_noise.Qk = cfg.ekf.shift_scale * Mat::Identity(zdim, zdim);
        filter_noise.Qk.bottomRightCorner(p, p) =
            cfg.ekf.resolved_process_scale(cfg.noise.sigma_w2, cfg.model.C) *
            Mat::Identity(p, p);
        filter_noise.Rk = cfg.ekf.resolved_measurement_scale(cfg.noise.sigma_v2) *
                          Mat::Identity(p, p);
        Vec z0(zdim);
        for (int i = 0; i < Np; ++i)
            z0.segment(static_cast<Index>(p) * i, p) = ys[static_cast<std::size_t>(1 + i)];
        state = ekf_init(z0, cfg.ekf.initial_scale, Np);
    }

    auto input_window = [&]() {
        Vec u_p(static_cast<Index>(m) * Np);
        const std::size_t t = us.size();
        for (int i = 0; i < Np; ++i)
            u_p.segment(static_cast<Index>(m) * i, m) =
                us[t - static_cast<std::size_t>(Np) + static_cast<std::size_t>(i)];
        return u_p;
    };

    int k = 0;
    try {
        while (k < cfg.Nsim) {
            const std::size_t t = static_cast<std::size_t>(Np + k);
            const Vec r_window = cfg.reference.window(p, k + 1, Nf);
            const Vec u_p = input_window();

            DeepcStep step;
            Vec oracle_sequence;
            if (use_oracle) {
                oracle_sequence = oracle->step_sequence(plant.x, r_window);
            } else if (use_ekf) {
                step = controller->step_ekf(r_window, u_p, state.z_hat);
            } else {
                Vec z(static_cast<Index>(p) * Np);
                for (int i = 0; i < Np; ++i)
                    z.segment(static_cast<Index>(p) * i, p) =
                        ys[t - static_cast<std::size_t>(Np) + 1 +
                           static_cast<std::size_t>(i)];
                step = controller->step_standard(r_window, u_p, z);
            }

            if (use_ekf) {
                if (step.has_law && !step.law.degenerate) {
                    dyn = implicit_dynamics(controller->map(), step.law);
                    have_dyn = true;
                } else {
                    ++result.degenerate_law_steps;
                    if (!have_dyn)
                        dyn = shift_dynamics(p, Np, m);
                }
            }

            const int apply = std::min(cfg.deepc.Nc + 1, cfg.Nsim - k);
            for (int j = 0; j < apply; ++j) {
                const Vec u = use_oracle
                                  ? Vec(oracle_sequence.segment(
                                        static_cast<Index>(j) * m, m))
                                  : step.u_applied[static_cast<std::size_t>(j)];
                const Vec u_p_now = use_ekf ? input_window() : Vec();
                if (observer)
                    observer(StepContext{k + 1, plant.x, u, r_window});

                plant.advance(u);
                us.push_back(u);
                const Vec y = plant.measure();
                ys.push_back(y);

                const Vec r_now = cfg.reference.value(p, k + 1);
                result.J += stage_cost(cfg.deepc.Q, cfg.deepc.R, y, r_now, u);
                result.inputs.push_back(u);
                result.outputs.push_back(y);
                result.reference.push_back(r_now);

                if (use_ekf) {
                    auto [z_pred, P_pred] =
                        ekf_predict(state, dyn, u_p_now, filter_noise);

                    FilterDiagnostics diag;
                    diag.innovation_norm = (y - dyn.C_sel * z_pred).norm();
                    Mat S = dyn.C_sel * P_pred * dyn.C_sel.transpose() +
                            filter_noise.Rk;
                    Eigen::LLT<Mat> llt(S);
                    diag.gain_norm =
                        llt.info() == Eigen::Success
                            ? llt.solve(dyn.C_sel * P_pred).transpose().norm()
                            : kNaN;

                    state = ekf_update(z_pred, P_pred, y, dyn, filter_noise,
                                       Np + k + 1);
                    state.validate();
                    diag.trace_P = state.P.trace();
                    result.filter.push_back(diag);
                }
                ++k;
            }
        }
    } catch (const QpInfeasible& err) {
        result.failed = true;
        result.failure_reason = err.what();
    }

    if (controller)
        result.fallback_count = controller->fallback_count();
    else if (oracle)
        result.fallback_count = oracle->fallback_count();
    return result;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, int rep,
                                const StepObserver& observer)
{
    if (cfg.variant == Variant::MpcOracle)
        return run_closed_loop(cfg, DataBlocks{}, rep, observer);
    return run_closed_loop(cfg, prepare_data(cfg, rep), rep, observer);
}

MpcOracle::MpcOracle(const LtiModel& model, DeePCConfig cfg, QpOptions qp_opts)
    : model_(model), cfg_(std::move(cfg))
{
    cfg_.validate(model_.m, model_.p);
    detail::require(model_.D.cwiseAbs().maxCoeff() == 0.0,
                    "MpcOracle: the shared prediction alignment requires D = 0");
    const int m = model_.m, p = model_.p, n = model_.n, Nf = cfg_.Nf;

    Phi_.resize(static_cast<Index>(p) * Nf, n);
    Gamma_ = Mat::Zero(static_cast<Index>(p) * Nf, static_cast<Index>(m) * Nf);
    Mat Apow = model_.A; // A^{i+1} while filling block row i
    std::vector<Mat> CAB(static_cast<std::size_t>(Nf)); // C A^k B for k = 0..Nf-1
    Mat Ak = Mat::Identity(n, n);
    for (int k2 = 0; k2 < Nf; ++k2) {
        CAB[static_cast<std::size_t>(k2)] = model_.C * Ak * model_.B;
        Ak = Ak * model_.A;
    }
    for (int i = 0; i < Nf; ++i) {
        Phi_.middleRows(static_cast<Index>(p) * i, p) = model_.C * Apow;
        Apow = Apow * model_.A;
        for (int j = 0; j <= i; ++j)
            Gamma_.block(static_cast<Index>(p) * i, static_cast<Index>(m) * j, p, m) =
                CAB[static_cast<std::size_t>(i - j)];
    }

    Qblk_ = block_diag_repeat(cfg_.Q, Nf);
    const Mat Rblk = block_diag_repeat(cfg_.R, Nf);

    u_bounds_.resize(2 * static_cast<Index>(m) * Nf);
    u_bounds_ << repeat_vector(cfg_.u_max, Nf), repeat_vector(-cfg_.u_min, Nf);
    y_max_rep_ = repeat_vector(cfg_.y_max, Nf);
    y_min_rep_ = repeat_vector(cfg_.y_min, Nf);

    QpProblem qp;
    qp.P = Gamma_.transpose() * Qblk_ * Gamma_ + Rblk;
    qp.P = ((qp.P + qp.P.transpose()) / 2.0).eval();
    qp.q = Vec::Zero(static_cast<Index>(m) * Nf);
    qp.Aeq = Mat::Zero(0, static_cast<Index>(m) * Nf);
    qp.beq = Vec::Zero(0);
    const Index mi = static_cast<Index>(m) * Nf;
    qp.Ain.resize(2 * mi + 2 * y_max_rep_.size(), mi);
    qp.Ain << Mat::Identity(mi, mi), -Mat::Identity(mi, mi), Gamma_, -Gamma_;
    qp.bin.resize(qp.Ain.rows());
    qp.bin << u_bounds_, y_max_rep_, -y_min_rep_;
    solver_ = std::make_unique<ActiveSetQp>(std::move(qp), qp_opts);
}

Vec MpcOracle::step_sequence(const Vec& x_true, const Vec& r_window)
{
    detail::require(x_true.size() == model_.n, "MpcOracle: state dimension mismatch");
    detail::require(r_window.size() == y_max_rep_.size(),
                    "MpcOracle: reference window length mismatch");

    const Vec y_free = Phi_ * x_true;
    Vec q = Gamma_.transpose() * (Qblk_ * (y_free - r_window));
    Vec bin(u_bounds_.size() + 2 * y_free.size());
    bin << u_bounds_, y_max_rep_ - y_free, y_free - y_min_rep_;

    solver_->update_linear_terms(std::move(q), Vec::Zero(0));
    solver_->update_inequality_bounds(std::move(bin));

    QpSolution sol;
    try {
        sol = solver_->solve(warm_hint_);
        warm_hint_ = sol.active_set;
    } catch (const QpInfeasible&) {
        Vec wide(u_bounds_.size() + 2 * y_free.size());
        wide << u_bounds_, 10.0 * y_max_rep_ - y_free, y_free - 10.0 * y_min_rep_;
        solver_->update_inequality_bounds(std::move(wide));
        sol = solver_->solve();
        ++fallbacks_;
    }
    return sol.g_star;
}

Vec MpcOracle::step(const Vec& x_true, const Vec& r_window)
{
    return step_sequence(x_true, r_window).head(model_.m);
}

Vec mpc_oracle(const LtiModel& model, const DeePCConfig& cfg, const Vec& x_true,
               const Vec& r_window)
{
    MpcOracle oracle(model, cfg);
    return oracle.step(x_true, r_window);
}

VariantStats monte_carlo(const ExperimentConfig& cfg, int jobs)
{
    cfg.validate();
    VariantStats stats;
    stats.variant = cfg.variant;
    stats.lambda_y = cfg.deepc.lambda_y;
    stats.lambda_g = cfg.deepc.lambda_g;
    stats.repetitions = cfg.repetitions;
    stats.costs.assign(static_cast<std::size_t>(cfg.repetitions), kNaN);

    std::vector<long> fallbacks(static_cast<std::size_t>(cfg.repetitions), 0);
    parallel_for(cfg.repetitions, jobs, [&](int rep) {
        auto result = run_experiment(cfg, rep);
        if (!result.failed)
            stats.costs[static_cast<std::size_t>(rep)] = result.J;
        fallbacks[static_cast<std::size_t>(rep)] = result.fallback_count;
    });
    for (long f : fallbacks)
        stats.fallbacks_total += f;
    finalize_stats(stats);
    return stats;
}

PairedComparison paired_compare(const VariantStats& a, const VariantStats& b)
{
    detail::require(a.costs.size() == b.costs.size(),
                    "paired_compare: repetition counts differ");
    PairedComparison cmp;
    double sum = 0.0;
    int informative = 0;
    for (std::size_t i = 0; i < a.costs.size(); ++i) {
        const double ca = a.costs[i], cb = b.costs[i];
        if (std::isnan(ca) || std::isnan(cb))
            continue;
        ++cmp.pairs;
        sum += ca - cb;
        if (ca > cb) {
            ++cmp.wins_a;
            ++informative;
        } else if (cb > ca) {
            ++informative;
        }
    }
    cmp.mean_diff = cmp.pairs > 0 ? sum / cmp.pairs : 0.0;
    cmp.p_value = binomial_upper_tail(informative, cmp.wins_a);
    return cmp;
}

LambdaTable sweep_lambda(const ExperimentConfig& cfg, int jobs)
{
    cfg.validate();
    detail::require(cfg.variant != Variant::MpcOracle,
                    "sweep_lambda: the oracle has no regularization to tune");
    detail::require(!cfg.lambda_y_grid.empty() && !cfg.lambda_g_grid.empty(),
                    "sweep_lambda: empty grid");

    std::vector<double> ly_grid = cfg.lambda_y_grid;
    std::vector<double> lg_grid = cfg.lambda_g_grid;
    std::sort(ly_grid.begin(), ly_grid.end());
    std::sort(lg_grid.begin(), lg_grid.end());

    const int reps = cfg.tuning_repetitions;
    std::vector<DataBlocks> blocks(static_cast<std::size_t>(reps));
    parallel_for(reps, jobs, [&](int rep) {
        blocks[static_cast<std::size_t>(rep)] = prepare_data(cfg, rep);
    });

    LambdaTable table;
    bool have_best = false;
    bool best_valid = false;
    double best_mean = 0.0;
    for (double lg : lg_grid) {
        for (double ly : ly_grid) {
            ExperimentConfig point = cfg;
            point.deepc.lambda_y = ly;
            point.deepc.lambda_g = lg;

            std::vector<double> costs(static_cast<std::size_t>(reps), kNaN);
            parallel_for(reps, jobs, [&](int rep) {
                auto result =
                    run_closed_loop(point, blocks[static_cast<std::size_t>(rep)], rep);
                if (!result.failed)
                    costs[static_cast<std::size_t>(rep)] = result.J;
            });

            LambdaCell cell;
            cell.lambda_y = ly;
            cell.lambda_g = lg;
            double sum = 0.0;
            for (double c : costs) {
                if (std::isnan(c))
                    ++cell.n_failed;
                else {
                    sum += c;
                    ++cell.n_ok;
                }
            }
            cell.mean_J = cell.n_ok > 0 ? sum / cell.n_ok
                                        : std::numeric_limits<double>::infinity();
            cell.valid = 20 * cell.n_failed <= reps && cell.n_ok > 0;
            table.cells.push_back(cell);

            // Strict improvement plus the ascending iteration order makes
            // ties resolve toward smaller (lambda_g, lambda_y).
            const bool better = !have_best ||
                                (cell.valid && !best_valid) ||
                                (cell.valid == best_valid && cell.mean_J < best_mean);
            if (better) {
                have_best = true;
                best_valid = cell.valid;
                best_mean = cell.mean_J;
                table.best_lambda_y = ly;
                table.best_lambda_g = lg;
            }
        }
    }
    return table;
}

const char* sweep_parameter_name(SweepParameter p)
{
    switch (p) {
    case SweepParameter::SigmaV2:
        return "sigma_v2";
    case SweepParameter::SigmaW2:
        return "sigma_w2";
    case SweepParameter::PastHorizon:
        return "Np";
    case SweepParameter::AveragedCount:
        return "N";
    }
    return "unknown";
}

SweepParameter sweep_parameter_from_name(const std::string& name)
{
    if (name == "sigma_v2")
        return SweepParameter::SigmaV2;
    if (name == "sigma_w2")
        return SweepParameter::SigmaW2;
    if (name == "Np")
        return SweepParameter::PastHorizon;
    if (name == "N")
        return SweepParameter::AveragedCount;
    throw ContractError("unknown sweep parameter: " + name);
}

ExperimentConfig apply_parameter(ExperimentConfig cfg, SweepParameter param,
                                 double value)
{
    switch (param) {
    case SweepParameter::SigmaV2:
        cfg.noise.sigma_v2 = value;
        break;
    case SweepParameter::SigmaW2:
        cfg.noise.sigma_w2 = value;
        break;
    case SweepParameter::PastHorizon:
        cfg.deepc.Np = static_cast<int>(std::lround(value));
        break;
    case SweepParameter::AveragedCount:
        cfg.N = static_cast<int>(std::lround(value));
        break;
    }
    return cfg;
}

std::vector<SweepPoint> sweep_parameter(const ExperimentConfig& base,
                                        SweepParameter param,
                                        const std::vector<double>& grid,
                                        const std::vector<Variant>& variants,
                                        int jobs)
{
    detail::require(!grid.empty(), "sweep_parameter: empty grid");
    detail::require(!variants.empty(), "sweep_parameter: no variants");

    std::vector<SweepPoint> points;
    points.reserve(grid.size() * variants.size());
    for (double value : grid) {
        const ExperimentConfig at_value = apply_parameter(base, param, value);
        for (Variant v : variants) {
            ExperimentConfig cfg = at_value;
            cfg.variant = v;
            if (v != Variant::MpcOracle) {
                const LambdaTable table = sweep_lambda(cfg, jobs);
                cfg.deepc.lambda_y = table.best_lambda_y;
                cfg.deepc.lambda_g = table.best_lambda_g;
            }
            SweepPoint point;
            point.value = value;
            point.stats = monte_carlo(cfg, jobs);
            points.push_back(std::move(point));
        }
    }
    return points;
}

} // namespace ddpc
