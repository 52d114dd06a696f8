#include "ddpc/ekf.hpp"
#include "ddpc/deepc.hpp"
#include "ddpc/hankel.hpp"
#include "ddpc/lti_sim.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using ddpc::EkfNoise;
using ddpc::EkfState;
using ddpc::ImplicitDynamics;
using ddpc::Index;
using ddpc::Mat;
using ddpc::Vec;

namespace {

ImplicitDynamics manual_dynamics(Mat A, Mat B, Vec h)
{
    ImplicitDynamics dyn;
    const Index zdim = A.rows();
    dyn.A_k = std::move(A);
    dyn.B_k = std::move(B);
    dyn.h_k = std::move(h);
    dyn.C_sel = Mat::Zero(1, zdim);
    dyn.C_sel(0, zdim - 1) = 1.0;
    return dyn;
}

EkfNoise isotropic_noise(Index zdim, double q, Index p, double r)
{
    EkfNoise noise;
    noise.Qk = q * Mat::Identity(zdim, zdim);
    noise.Rk = r * Mat::Identity(p, p);
    return noise;
}

} // namespace

TEST_CASE("state validation")
{
    EkfState state;
    state.z_hat = Vec::Zero(2);
    state.P = Mat::Identity(2, 2);
    CHECK_NOTHROW(state.validate());

    state.P << 1.0, 0.5, -0.5, 1.0; // asymmetric
    CHECK_THROWS_AS(state.validate(), ddpc::ContractError);

    state.P << 1.0, 2.0, 2.0, 1.0; // eigenvalues 3 and -1
    CHECK_THROWS_AS(state.validate(), ddpc::ContractError);

    // A tiny negative eigenvalue from roundoff is tolerated.
    state.P << 1.0, 0.0, 0.0, -1e-12;
    CHECK_NOTHROW(state.validate());

    state.P = Mat::Identity(3, 3); // shape mismatch with z_hat
    CHECK_THROWS_AS(state.validate(), ddpc::ContractError);
}

TEST_CASE("initialization stacks the measured window")
{
    SUBCASE("zero measurements and unit scale")
    {
        auto state = ddpc::ekf_init(Vec::Zero(3), 1.0);
        CHECK(state.z_hat.cwiseAbs().maxCoeff() == 0.0);
        CHECK(oracles::max_abs_diff(state.P, Mat::Identity(3, 3)) == 0.0);
        CHECK(state.k == 0);
    }

    SUBCASE("window values are kept in order")
    {
        Vec window(3);
        window << -1.0, 2.0, 0.5;
        auto state = ddpc::ekf_init(window, 0.25, 7);
        CHECK(oracles::max_abs_diff(Mat(state.z_hat), Mat(window)) == 0.0);
        CHECK(oracles::max_abs_diff(state.P, Mat(0.25 * Mat::Identity(3, 3))) == 0.0);
        CHECK(state.k == 7);
    }

    SUBCASE("zero scale starts fully confident")
    {
        auto state = ddpc::ekf_init(Vec::Ones(2), 0.0);
        CHECK(state.P.cwiseAbs().maxCoeff() == 0.0);
        CHECK_NOTHROW(state.validate());
    }

    CHECK_THROWS_AS(ddpc::ekf_init(Vec(), 1.0), ddpc::ContractError);
    CHECK_THROWS_AS(ddpc::ekf_init(Vec::Ones(2), -1.0), ddpc::ContractError);
}

TEST_CASE("predict hand cases")
{
    EkfState state;
    state.z_hat = Vec::LinSpaced(2, 1.0, 2.0);
    state.P = Mat::Identity(2, 2);

    SUBCASE("identity dynamics leave the state untouched")
    {
        auto dyn = manual_dynamics(Mat::Identity(2, 2), Mat::Zero(2, 2), Vec::Zero(2));
        auto [z_pred, P_pred] =
            ddpc::ekf_predict(state, dyn, Vec::Zero(2), isotropic_noise(2, 0.0, 1, 1.0));
        CHECK(oracles::max_abs_diff(Mat(z_pred), Mat(state.z_hat)) == 0.0);
        CHECK(oracles::max_abs_diff(P_pred, state.P) == 0.0);
    }

    SUBCASE("zero dynamics reduce to the offset and process noise")
    {
        Vec c(2);
        c << 3.0, -4.0;
        auto dyn = manual_dynamics(Mat::Zero(2, 2), Mat::Zero(2, 2), c);
        auto [z_pred, P_pred] =
            ddpc::ekf_predict(state, dyn, Vec::Zero(2), isotropic_noise(2, 0.7, 1, 1.0));
        CHECK(oracles::max_abs_diff(Mat(z_pred), Mat(c)) == 0.0);
        CHECK(oracles::max_abs_diff(P_pred, Mat(0.7 * Mat::Identity(2, 2))) == 0.0);
    }

    SUBCASE("input term enters through B_k")
    {
        auto dyn = manual_dynamics(Mat::Zero(2, 2), Mat::Identity(2, 2), Vec::Zero(2));
        Vec u_p(2);
        u_p << 0.5, -0.25;
        auto [z_pred, P_pred] =
            ddpc::ekf_predict(state, dyn, u_p, isotropic_noise(2, 0.0, 1, 1.0));
        CHECK(oracles::max_abs_diff(Mat(z_pred), Mat(u_p)) == 0.0);
        CHECK(P_pred.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("two-state filter cycle matches the hand-computed Riccati step")
{
    // Shift-style dynamics with entries chosen so every product below can be
    // carried out on paper.
    Mat A(2, 2);
    A << 0.0, 1.0, 0.5, 0.3;
    Mat B(2, 1);
    B << 0.0, 1.0;
    Vec h(2);
    h << 0.1, -0.1;
    auto dyn = manual_dynamics(A, B, h);

    EkfState state;
    state.z_hat = Vec(2);
    state.z_hat << 1.0, 2.0;
    state.P = Mat(2, 2);
    state.P << 2.0, 0.1, 0.1, 1.0;
    state.k = 4;

    auto noise = isotropic_noise(2, 0.2, 1, 0.5);
    Vec u_p = Vec::Constant(1, 0.4);
    auto [z_pred, P_pred] = ddpc::ekf_predict(state, dyn, u_p, noise);

    // A z = (2, 1.1); + B u = (2, 1.5); + h = (2.1, 1.4).
    CHECK(z_pred(0) == doctest::Approx(2.1).epsilon(1e-14));
    CHECK(z_pred(1) == doctest::Approx(1.4).epsilon(1e-14));

    // Entrywise A P A^T: (1,1) picks P_22, (1,2) = (P_21, P_22) . (0.5, 0.3),
    // (2,2) = 0.25*2 + 2*0.15*0.1 + 0.09*1; then add 0.2 on the diagonal.
    CHECK(P_pred(0, 0) == doctest::Approx(1.2).epsilon(1e-14));
    CHECK(P_pred(0, 1) == doctest::Approx(0.35).epsilon(1e-14));
    CHECK(P_pred(1, 0) == doctest::Approx(0.35).epsilon(1e-14));
    CHECK(P_pred(1, 1) == doctest::Approx(0.82).epsilon(1e-14));

    auto next = ddpc::ekf_update(z_pred, P_pred, Vec::Constant(1, 1.3), dyn, noise,
                                 state.k + 1);

    // Scalar innovation pipeline: S = 0.82 + 0.5, K = (0.35, 0.82)/S,
    // e = 1.3 - 1.4.
    const double S = 1.32;
    const double K0 = 0.35 / S, K1 = 0.82 / S;
    CHECK(next.z_hat(0) == doctest::Approx(2.1 - 0.1 * K0).epsilon(1e-13));
    CHECK(next.z_hat(1) == doctest::Approx(1.4 - 0.1 * K1).epsilon(1e-13));
    CHECK(next.k == 5);

    // With the exact gain the Joseph form collapses to (I - K C) P_pred.
    CHECK(next.P(0, 0) == doctest::Approx(1.2 - K0 * 0.35).epsilon(1e-12));
    CHECK(next.P(0, 1) == doctest::Approx(0.35 - K0 * 0.82).epsilon(1e-12));
    CHECK(next.P(1, 1) == doctest::Approx((1.0 - K1) * 0.82).epsilon(1e-12));
    CHECK(next.P(1, 0) == doctest::Approx(next.P(0, 1)).epsilon(1e-13));
    CHECK_NOTHROW(next.validate());
}

TEST_CASE("scalar update gain")
{
    auto dyn = manual_dynamics(Mat::Identity(1, 1), Mat::Zero(1, 1), Vec::Zero(1));
    auto noise = isotropic_noise(1, 0.0, 1, 1.0);
    auto next = ddpc::ekf_update(Vec::Zero(1), Mat::Identity(1, 1),
                                 Vec::Constant(1, 1.0), dyn, noise, 1);
    CHECK(next.z_hat(0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(next.P(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("update limit cases")
{
    auto dyn = manual_dynamics(Mat::Identity(2, 2), Mat::Zero(2, 1), Vec::Zero(2));
    Vec z_pred(2);
    z_pred << 1.0, -1.0;

    SUBCASE("huge measurement noise ignores the measurement")
    {
        auto noise = isotropic_noise(2, 0.0, 1, 1e12);
        auto next = ddpc::ekf_update(z_pred, Mat::Identity(2, 2),
                                     Vec::Constant(1, 100.0), dyn, noise, 1);
        CHECK(oracles::max_abs_diff(Mat(next.z_hat), Mat(z_pred)) < 1e-9);
        CHECK(oracles::max_abs_diff(next.P, Mat::Identity(2, 2)) < 1e-9);
    }

    SUBCASE("zero prior covariance gives zero gain")
    {
        auto noise = isotropic_noise(2, 0.0, 1, 0.5);
        auto next = ddpc::ekf_update(z_pred, Mat::Zero(2, 2), Vec::Constant(1, 7.0),
                                     dyn, noise, 1);
        CHECK(oracles::max_abs_diff(Mat(next.z_hat), Mat(z_pred)) == 0.0);
        CHECK(next.P.cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("tiny measurement noise pins the measured entry")
    {
        auto noise = isotropic_noise(2, 0.0, 1, 1e-12);
        auto next = ddpc::ekf_update(z_pred, Mat::Identity(2, 2),
                                     Vec::Constant(1, 3.0), dyn, noise, 1);
        CHECK(next.z_hat(1) == doctest::Approx(3.0).epsilon(1e-9));
        CHECK(next.z_hat(0) == doctest::Approx(1.0).epsilon(1e-9));
        CHECK_NOTHROW(next.validate());
    }

    SUBCASE("singular innovation covariance is an error")
    {
        auto noise = isotropic_noise(2, 0.0, 1, 0.0);
        CHECK_THROWS_AS(ddpc::ekf_update(z_pred, Mat::Zero(2, 2),
                                         Vec::Constant(1, 1.0), dyn, noise, 1),
                        std::runtime_error);
    }
}

TEST_CASE("implicit dynamics slice the law through the prediction map")
{
    ddpc::RngStream rng(61);
    const int p = 1, Np = 2, m = 1, d = 4;

    ddpc::PredictionMap map;
    map.p = p;
    map.Np = Np;
    map.M = Mat::NullaryExpr(p * Np, d, [&] { return rng.gaussian(); });

    ddpc::AffineLaw law;
    law.A_tilde = Mat::NullaryExpr(d, p * Np + m * Np, [&] { return rng.gaussian(); });
    law.h_tilde = rng.gaussian_vector(d);

    auto dyn = ddpc::implicit_dynamics(map, law);
    CHECK(oracles::max_abs_diff(dyn.A_k, Mat(map.M * law.A_tilde.leftCols(2))) == 0.0);
    CHECK(oracles::max_abs_diff(dyn.B_k, Mat(map.M * law.A_tilde.rightCols(2))) ==
          0.0);
    CHECK(oracles::max_abs_diff(Mat(dyn.h_k), Mat(Vec(map.M * law.h_tilde))) == 0.0);

    Mat C_expected(1, 2);
    C_expected << 0.0, 1.0;
    CHECK(oracles::max_abs_diff(dyn.C_sel, C_expected) == 0.0);

    // Mismatched shapes are rejected.
    ddpc::AffineLaw bad = law;
    bad.A_tilde = Mat::Zero(d + 1, 4);
    CHECK_THROWS_AS(ddpc::implicit_dynamics(map, bad), ddpc::ContractError);
}

TEST_CASE("covariance stays symmetric PSD over a long random run")
{
    ddpc::RngStream rng(67);
    const Index zdim = 3;
    auto state = ddpc::ekf_init(Vec::Zero(zdim), 1.0);
    auto noise = isotropic_noise(zdim, 0.1, 1, 0.1);

    for (int step = 0; step < 100; ++step) {
        Mat A = Mat::NullaryExpr(zdim, zdim, [&] { return 0.5 * rng.gaussian(); });
        Mat B = Mat::NullaryExpr(zdim, 2, [&] { return rng.gaussian(); });
        ImplicitDynamics dyn;
        dyn.A_k = A;
        dyn.B_k = B;
        dyn.h_k = rng.gaussian_vector(zdim);
        dyn.C_sel = Mat::Zero(1, zdim);
        dyn.C_sel(0, zdim - 1) = 1.0;

        auto [z_pred, P_pred] = ddpc::ekf_predict(state, dyn, rng.gaussian_vector(2),
                                                  noise);
        CHECK(oracles::max_abs_diff(P_pred, Mat(P_pred.transpose())) == 0.0);
        state = ddpc::ekf_update(z_pred, P_pred, rng.gaussian_vector(1), dyn, noise,
                                 state.k + 1);
        CHECK_NOTHROW(state.validate());
    }
    CHECK(state.k == 100);
}

TEST_CASE("filter tracks the true output window on a noise-free closed loop")
{
    // Exact data, near-exact window matching, vanishing filter noise: the
    // estimate must follow the true window and recover from a wrong start.
    auto model = oracles::benchmark_model();
    const int Np = 2, Nf = 3, T = 40;

    auto inputs = ddpc::generate_pe_input(1, T, Np + Nf + 2, 1.0, 71);
    ddpc::NoiseSpec clean;
    auto traj = ddpc::simulate(model, Vec::Zero(2), inputs, clean);

    // Past outputs are paired one step ahead of past inputs, so a column
    // holds u_j..u_{j+Np-1} alongside y_{j+1}..y_{j+Np}; the prediction map
    // then advances the window exactly one plant step.
    std::vector<Vec> u_shift(traj.inputs.begin(), traj.inputs.end() - 1);
    std::vector<Vec> y_shift(traj.outputs.begin() + 1, traj.outputs.end());
    auto data = ddpc::split_past_future(u_shift, y_shift, Np, Nf);

    ddpc::DeePCConfig cfg;
    cfg.Np = Np;
    cfg.Nf = Nf;
    cfg.Q = Mat::Identity(1, 1);
    cfg.R = Mat::Identity(1, 1);
    cfg.lambda_y = 1e7;
    cfg.lambda_g = 1e-7;
    cfg.u_min = Vec::Constant(1, -50.0);
    cfg.u_max = Vec::Constant(1, 50.0);
    cfg.y_min = Vec::Constant(1, -500.0);
    cfg.y_max = Vec::Constant(1, 500.0);

    ddpc::DeepcController controller(data, cfg);
    auto noise = isotropic_noise(Np, 1e-8, 1, 1e-10);

    // Warm up the plant for Np steps to fill the windows.
    Vec x = Vec::Zero(2);
    std::vector<double> us, ys;
    ys.push_back((model.C * x)(0));
    for (int k = 0; k < Np; ++k) {
        double u = 0.3 * std::sin(0.7 * k) + 0.2;
        x = model.A * x + model.B * Vec::Constant(1, u);
        us.push_back(u);
        ys.push_back((model.C * x)(0));
    }

    auto window_at = [&](std::size_t t) {
        Vec z(Np);
        for (int i = 0; i < Np; ++i)
            z(i) = ys[t - Np + 1 + i];
        return z;
    };

    std::size_t t = Np;
    auto state = ddpc::ekf_init(window_at(t) + Vec::Constant(Np, 0.1), 1.0,
                                static_cast<int>(t));
    ImplicitDynamics dyn;
    double worst_late = 0.0;

    for (int step = 0; step < 12; ++step, ++t) {
        Vec u_p(Np), r(Nf);
        for (int i = 0; i < Np; ++i)
            u_p(i) = us[t - Np + i];
        for (int i = 0; i < Nf; ++i)
            r(i) = 0.5 * std::sin(0.3 * static_cast<double>(t + 1 + i));

        auto out = controller.step_ekf(r, u_p, state.z_hat);
        REQUIRE(out.has_law);
        REQUIRE_FALSE(out.fallback_used);
        dyn = ddpc::implicit_dynamics(controller.map(), out.law);

        double u = out.u_applied[0](0);
        x = model.A * x + model.B * Vec::Constant(1, u);
        us.push_back(u);
        ys.push_back((model.C * x)(0));

        auto [z_pred, P_pred] = ddpc::ekf_predict(state, dyn, u_p, noise);

        // Shift structure: the aged entries of the prediction repeat the
        // newest entries of the previous estimate up to the soft matching
        // error.
        CHECK(std::abs(z_pred(0) - state.z_hat(1)) < 1e-4);

        state = ddpc::ekf_update(z_pred, P_pred, Vec::Constant(1, ys[t + 1]), dyn,
                                 noise, static_cast<int>(t) + 1);
        CHECK_NOTHROW(state.validate());

        double err = (state.z_hat - window_at(t + 1)).cwiseAbs().maxCoeff();
        if (step >= Np + 1)
            worst_late = std::max(worst_late, err);
    }

    // The wrong initial guess must be flushed out after the window has been
    // fully re-measured.
    CHECK(worst_late < 1e-6);
    CHECK(state.k == static_cast<int>(t));
}
