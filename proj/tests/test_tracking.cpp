#include "support.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <vector>

#include "nearfield/scenario.hpp"
#include "nearfield/tracking.hpp"

using namespace nearfield;
using testing::uniform;

namespace
{

Scenario load(const std::string &name)
{
    std::ifstream in(testing::source_dir() / "configs" / name);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str());
}

State4 random_state(RandomStream &rng)
{
    return {uniform(rng, 1.0, 20.0), uniform(rng, 0.3, kPi - 0.3), uniform(rng, -15, 15), uniform(rng, -15, 15)};
}

Matrix4 random_covariance(RandomStream &rng)
{
    Matrix4 a;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            a(i, j) = rng.normal();
    const Eigen::Vector4d scale(0.05, 0.01, 2.0, 2.0);
    return scale.asDiagonal() * (a * a.transpose() + 0.1 * Matrix4::Identity()) * scale.asDiagonal();
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

} // namespace

TEST_SUITE("state model")
{
    TEST_CASE("state transition")
    {
        const State4 q(3.0, 1.0, 0.0, 0.0);
        CHECK(state_transition(q, 1e-3) == q);
        const State4 next = state_transition(State4(10.0, 1.2, 1.0, 0.0), 1e-3);
        CHECK(next[0] == doctest::Approx(10.001).epsilon(1e-15));
        CHECK(next[1] == 1.2);
        CHECK_THROWS_AS(state_transition(State4(0.001, 1.0, -2.0, 0.0), 1e-3), TargetPassedOrigin);
    }

    TEST_CASE("hundred-CPI trajectory against straight-line kinematics")
    {
        const MotionState m{{1.2, 5.0}, -6.0, 12.0};
        State4 q = to_state(m);
        for (int i = 0; i < 100; ++i)
            q = state_transition(q, 1e-3);
        const Point2 p = m.target.location() + 0.1 * m.velocity();
        const double angle_error = std::abs(std::atan2(p.y(), p.x()) - q[1]);
        // Straight-line propagation of the same initial state, 100 CPIs of 1 ms.
        CHECK(angle_error == doctest::Approx(0.010748872577459823).epsilon(1e-8));
        CHECK(angle_error < 0.0108);
    }

    TEST_CASE("state jacobian")
    {
        const State4 q(4.0, 1.1, -2.0, 3.0);
        const double t = 1e-3;
        Matrix4 expected;
        expected << 1, 0, t, 0, -3.0 * t / 16.0, 1, 0, t / 4.0, 0, 0, 1, 0, 0, 0, 0, 1;
        CHECK((jacobian_state(q, t) - expected).norm() < 1e-15);
    }
}

TEST_SUITE("observation")
{
    TEST_CASE("static target and doubled CPI")
    {
        const auto setup = testing::ula_setup(16, 0.5);
        const State4 still(3.0, 1.0, 0.0, 0.0);
        CHECK((observation_fn(still, setup, 1e-3) - setup.steering_vector(1.0, 3.0)).norm() == 0.0);

        const State4 q(3.0, 1.0, 4.0, -6.0);
        const CVector g1 = observation_fn(q, setup, 1e-3), g2 = observation_fn(q, setup, 2e-3);
        const CVector ratio = g2.cwiseQuotient(g1);
        CHECK((ratio.cwiseAbs().array() - 1.0).abs().maxCoeff() < 1e-12);
        const CVector d = doppler_vector(setup.geometry, setup.waveform, {{1.0, 3.0}, 4.0, -6.0}, 0.5e-3);
        CHECK((ratio - d).cwiseAbs().maxCoeff() < 1e-12);
    }

    TEST_CASE("consistency with the moving-target synthesizer")
    {
        const auto setup = testing::ula_setup(32, 0.5);
        const MotionState m{{1.3, 4.0}, 5.0, -8.0};
        const double cpi = 1e-3;
        const auto snap = synthesize_moving(setup, std::vector<MotionState>{m}, SourceModel::unit_modulus, 1,
                                            cpi / 2, {}, 9);
        const CVector g = observation_fn(to_state(m), setup, cpi);
        CHECK((snap.data.col(0) / snap.sources(0, 0) - g).cwiseAbs().maxCoeff() < 1e-12);
    }

    TEST_CASE("property: analytic observation jacobian matches central differences")
    {
        RandomStream rng(1, 0);
        const auto plain = testing::ula_setup(16, 0.5);
        const auto amp = testing::ula_setup(16, 0.5, UlaReference::first, {true, DistanceModel::exact});
        const Eigen::Vector4d scale(1.0, 1.0, 1.0, 1.0);
        for (int c = 0; c < 1000; ++c)
        {
            const auto &setup = c % 2 ? amp : plain;
            const State4 q = random_state(rng);
            const cplx s = rng.complex_normal();
            const CMatrix ja = jacobian_obs(q, s, setup, 1e-3, JacobianMethod::analytic);
            for (int k = 0; k < 4; ++k)
            {
                // Fourth-order stencil; a wide step keeps the large carrier phase from swamping the difference.
                const double h = 1e-3 * std::max(std::abs(q[k]), scale[k]);
                auto at = [&](double offset) {
                    State4 p = q;
                    p[k] += offset;
                    return CVector(observation_fn(p, setup, 1e-3));
                };
                const CVector fd = s * (at(-2 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2 * h)) / (12 * h);
                REQUIRE((ja.col(k) - fd).cwiseAbs().maxCoeff() <= 1e-5 * fd.cwiseAbs().maxCoeff() + 1e-12);
            }
        }
        CHECK(jacobian_obs(State4(3, 1, 1, 1), 0.0, plain, 1e-3).norm() == 0.0);
    }
}

TEST_SUITE("gain")
{
    TEST_CASE("identity innovation covariance gives E in one step")
    {
        RandomStream rng(2, 0);
        CMatrix x(10, 4);
        for (auto &v : x.reshaped())
            v = rng.complex_normal();
        const CMatrix u = Eigen::HouseholderQR<CMatrix>(x).householderQ() * CMatrix::Identity(10, 4);
        const CMatrix g = 0.6 * u;
        const CMatrix q = CMatrix::Identity(4, 4);
        const CMatrix r = CMatrix::Identity(10, 10) - g * q * g.adjoint();
        for (auto rule : {GainStep::line_search, GainStep::conjugate})
        {
            const auto solve = kalman_gain_gd(q, g, r, 1, rule);
            CHECK((solve.gain - q * g.adjoint()).norm() < 1e-12);
        }
        const auto none = kalman_gain_gd(q, g, r, 0);
        CHECK(none.gain.norm() == 0.0);
        CHECK_FALSE(none.converged);
    }

    TEST_CASE("property: gradient-descent gain matches the closed form")
    {
        RandomStream rng(3, 0);
        const std::size_t sizes[] = {8, 32, 128};
        for (int c = 0; c < 1000; ++c)
        {
            const auto n = static_cast<Eigen::Index>(sizes[c % 3]);
            const CMatrix q = testing::random_psd(rng, 4, 4) + 0.1 * CMatrix::Identity(4, 4);
            CMatrix g(n, 4);
            for (auto &v : g.reshaped())
                v = rng.complex_normal() * 0.3;
            const CMatrix r = uniform(rng, 0.5, 2.0) * CMatrix::Identity(n, n);
            const CMatrix v = g * q * g.adjoint() + r;
            const CMatrix closed = q * g.adjoint() * v.inverse();
            const auto solve = kalman_gain_gd(q, g, r, 400, GainStep::conjugate, 1e-12);
            REQUIRE(solve.converged);
            REQUIRE((solve.gain - closed).norm() / closed.norm() < 1e-6);
        }
    }

    TEST_CASE("fixed and line-search steps also converge")
    {
        RandomStream rng(4, 0);
        const CMatrix q = testing::random_psd(rng, 4, 4) + 0.5 * CMatrix::Identity(4, 4);
        CMatrix g(8, 4);
        for (auto &v : g.reshaped())
            v = rng.complex_normal() * 0.2;
        const CMatrix r = CMatrix::Identity(8, 8);
        const CMatrix closed = q * g.adjoint() * (g * q * g.adjoint() + r).inverse();
        for (auto rule : {GainStep::fixed, GainStep::line_search})
        {
            const auto solve = kalman_gain_gd(q, g, r, 20000, rule, 1e-10);
            CHECK(solve.converged);
            CHECK((solve.gain - closed).norm() / closed.norm() < 1e-6);
        }
    }
}

TEST_SUITE("source estimate")
{
    TEST_CASE("exact and orthogonal cases")
    {
        const auto setup = testing::ula_setup(16, 0.5);
        const State4 q(3.0, 1.2, 2.0, 1.0);
        const CVector g = observation_fn(q, setup, 1e-3);
        const cplx s(0.3, -1.1);
        CHECK(std::abs(estimate_source_signal(g * s, q, setup, 1e-3) - s) < 1e-14);
        CVector y = CVector::Ones(16);
        y -= g * (g.dot(y) / g.squaredNorm());
        CHECK(std::abs(estimate_source_signal(y, q, setup, 1e-3)) < 1e-14);
    }

    TEST_CASE("estimation error at 0 dB")
    {
        const auto setup = testing::ula_setup(32, 0.5);
        const State4 q(3.0, 1.2, 2.0, 1.0);
        const CVector g = observation_fn(q, setup, 1e-3);
        RandomStream rng(5, 0);
        const cplx s(0.8, 0.6);
        double mse = 0.0;
        const int trials = 20000;
        for (int t = 0; t < trials; ++t)
        {
            CVector y = g * s;
            for (auto &v : y)
                v += rng.complex_normal(1.0);
            mse += std::norm(estimate_source_signal(y, q, setup, 1e-3) - s);
        }
        CHECK(mse / trials / std::norm(s) == doctest::Approx(1.0 / 32).epsilon(0.1));
    }
}

TEST_SUITE("filter")
{
    TEST_CASE("static target is a fixed point")
    {
        const auto setup = testing::ula_setup(32, 0.5);
        const State4 truth(4.0, 1.3, 0.0, 0.0);
        const cplx s(1.0, 0.0);
        std::vector<Measurement> ms(100, Measurement{observation_fn(truth, setup, 1e-3) * s, 1e-6, s});
        FilterState init{truth, Eigen::Vector4d(1e-6, 1e-8, 1e-4, 1e-4).asDiagonal().toDenseMatrix(), 0};
        const auto tr = track(ms, init, {}, setup, {});
        for (const auto &st : tr.states)
            REQUIRE((st.q - truth).norm() < 1e-9);
    }

    TEST_CASE("constant-velocity target with exact initialisation follows the kinematics")
    {
        const auto setup = testing::ula_setup(64, 0.5);
        const double cpi = 1e-3;
        State4 q(5.0, 1.2, -3.0, 4.0);
        const cplx s(0.6, 0.8);
        std::vector<Measurement> ms;
        std::vector<State4> truth;
        State4 x = q;
        for (int i = 0; i < 100; ++i)
        {
            x = state_transition(x, cpi);
            truth.push_back(x);
            ms.push_back({observation_fn(x, setup, cpi) * s, 1e-6, s});
        }
        FilterState init{q, Eigen::Vector4d(1e-6, 1e-8, 1e-4, 1e-4).asDiagonal().toDenseMatrix(), 0};
        EkfConfig cfg;
        cfg.cpi = cpi;
        const auto tr = track(ms, init, {}, setup, cfg);
        for (std::size_t i = 0; i < truth.size(); ++i)
            REQUIRE((tr.states[i].q - truth[i]).cwiseAbs().maxCoeff() < 1e-9);
    }

    TEST_CASE("property: updates never increase the covariance trace and keep it PSD")
    {
        RandomStream rng(6, 0);
        const auto setup = testing::ula_setup(16, 0.5);
        for (int c = 0; c < 1000; ++c)
        {
            const State4 q = random_state(rng);
            const FilterState st{q, random_covariance(rng), 0};
            const State4 truth = state_transition(q, 1e-3);
            const cplx s = rng.unit_phase();
            CVector y = observation_fn(truth, setup, 1e-3) * s;
            const double var = uniform(rng, 0.1, 10.0);
            for (auto &v : y)
                v += rng.complex_normal(var);
            const auto pn = ProcessNoise::diagonal(0.0, 0.0, uniform(rng, 0, 0.1), uniform(rng, 0, 0.1));
            EkfStep step;
            try
            {
                step = ekf_step(st, {y, var, s}, pn, setup, {});
            }
            catch (const FilterDivergence &)
            {
                continue; // posterior left the half plane; nothing to check
            }
            REQUIRE(step.posterior.covariance.trace() <= step.prior.covariance.trace() * (1 + 1e-12));
            const Matrix4 &p = step.posterior.covariance;
            REQUIRE((p - p.transpose()).norm() == 0.0);
            REQUIRE(Eigen::SelfAdjointEigenSolver<Matrix4>(p).eigenvalues().minCoeff() >= -1e-10 * p.trace());
        }
    }

    TEST_CASE("normalized innovations are consistent in a matched model")
    {
        const auto setup = testing::ula_setup(16, 0.5);
        const double cpi = 1e-3, var = 1.0;
        RandomStream rng(7, 0);
        State4 x(6.0, 1.4, -2.0, 3.0);
        const auto pn = ProcessNoise::diagonal(0.0, 0.0, 0.01, 0.01);
        std::vector<Measurement> ms;
        const State4 start = x;
        for (int i = 0; i < 500; ++i)
        {
            x = state_transition(x, cpi);
            x[2] += 0.1 * rng.normal();
            x[3] += 0.1 * rng.normal();
            const cplx s = 3.0 * rng.unit_phase();
            CVector y = observation_fn(x, setup, cpi) * s;
            for (auto &v : y)
                v += rng.complex_normal(var);
            ms.push_back({y, var, s});
        }
        FilterState init{start, Eigen::Vector4d(1e-6, 1e-8, 1e-2, 1e-2).asDiagonal().toDenseMatrix(), 0};
        const auto tr = track(ms, init, pn, setup, {});
        double mean = 0.0;
        for (double v : tr.nis)
            mean += v;
        mean /= double(tr.nis.size());
        CHECK(mean >= 0.5 * 32);
        CHECK(mean <= 2.0 * 32);
    }

    TEST_CASE("far-field initialisation leaves the transverse velocity uncertain")
    {
        const auto setup = testing::ula_setup(32, 0.5);
        const double cpi = 1e-3, r = 1e4 * setup.geometry.aperture();
        RandomStream rng(8, 0);
        State4 x(r, 1.3, 5.0, 5.0);
        std::vector<Measurement> ms;
        const State4 start = x;
        for (int i = 0; i < 50; ++i)
        {
            x = state_transition(x, cpi);
            const cplx s = rng.unit_phase();
            CVector y = observation_fn(x, setup, cpi) * s;
            for (auto &v : y)
                v += rng.complex_normal(0.1);
            ms.push_back({y, 0.1, s});
        }
        const Matrix4 p0 = Eigen::Vector4d(1.0, 1e-4, 25.0, 25.0).asDiagonal();
        const auto tr = track(ms, {start, p0, 0}, {}, setup, {});
        const Matrix4 &p = tr.states.back().covariance;
        CHECK(p(3, 3) > 0.5 * p0(3, 3));
        CHECK(p(2, 2) < 0.01 * p0(2, 2));
    }

    TEST_CASE("tracking reference scenario: errors fall and reruns are identical")
    {
        const Scenario sc = load("fig4_track.json");
        std::vector<double> early, late;
        for (std::uint64_t s = 1; s <= 10; ++s)
        {
            const auto out = run_track(sc, s);
            early.push_back(out.location_error[4]);
            late.push_back(out.location_error[99]);
        }
        CHECK(median(late) < median(early));

        const auto a = run_track(sc, sc.seed), b = run_track(sc, sc.seed);
        REQUIRE(a.trajectory.states.size() == b.trajectory.states.size());
        for (std::size_t i = 0; i < a.trajectory.states.size(); ++i)
        {
            REQUIRE(a.trajectory.states[i].q == b.trajectory.states[i].q);
            REQUIRE(a.trajectory.states[i].covariance == b.trajectory.states[i].covariance);
        }
    }
}

TEST_SUITE("moving-target DML")
{
    MotionGrid coarse_grid()
    {
        return {GridAxis::cosine(0.9, 1.9, 9), GridAxis::inverse(1.0, 4.0, 7), GridAxis::linear(-20, 20, 5),
                GridAxis::linear(-20, 20, 5)};
    }

    TEST_CASE("noiseless grid search returns the truth")
    {
        const auto setup = testing::ula_setup(32, 0.5);
        const MotionGrid grid = coarse_grid();
        const MotionState m{{grid.theta.values[4], grid.range.values[2]}, grid.radial_velocity.values[1],
                            grid.transverse_velocity.values[3]};
        const auto snap = synthesize_moving(setup, std::vector<MotionState>{m}, SourceModel::unit_modulus, 50,
                                            2e-4, {}, 1);
        const auto est = moving_dml_single(snap.data, 2e-4, setup, grid);
        CHECK(est.index == std::array<std::size_t, 4>{4, 2, 1, 3});
        CHECK_THROWS_AS(moving_dml_single(snap.data, 2e-4, setup, grid, 10), std::invalid_argument);
    }

    TEST_CASE("coarse grid at 10 dB")
    {
        const auto setup = testing::ula_setup(32, 0.5);
        const MotionGrid grid = coarse_grid();
        const MotionState m{{grid.theta.values[5], grid.range.values[3]}, grid.radial_velocity.values[3],
                            grid.transverse_velocity.values[1]};
        int hits = 0;
        const int seeds = 20;
        for (int s = 0; s < seeds; ++s)
        {
            const auto snap = synthesize_moving(setup, std::vector<MotionState>{m}, SourceModel::unit_modulus, 50,
                                                2e-4, NoiseModel::from_snr_db(10.0), derive_seed(4, s));
            const auto est = moving_dml_single(snap.data, 2e-4, setup, grid);
            const std::array<std::size_t, 4> truth{5, 3, 3, 1};
            bool ok = true;
            for (int k = 0; k < 4; ++k)
                ok = ok && std::abs(double(est.index[k]) - double(truth[k])) <= 1.0;
            hits += ok;
        }
        CHECK(hits >= 0.9 * seeds);
    }

    TEST_CASE("far away, the objective is flat along the transverse velocity")
    {
        const auto setup = testing::ula_setup(32, 0.5);
        const double r = 1e4 * setup.geometry.aperture();
        const MotionState m{{1.2, r}, 4.0, 0.0};
        const auto snap = synthesize_moving(setup, std::vector<MotionState>{m}, SourceModel::unit_modulus, 50,
                                            2e-4, {}, 2);
        const double peak = moving_dml_objective(snap.data, 2e-4, setup, m);
        double lo = peak, hi = peak;
        for (double vt = -20.0; vt <= 20.0; vt += 2.0)
        {
            const double v = moving_dml_objective(snap.data, 2e-4, setup, {{1.2, r}, 4.0, vt});
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        CHECK((hi - lo) < 0.01 * peak);
    }
}
