#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "nearfield/array_model.hpp"
#include "nearfield/subspace.hpp"

namespace nearfield
{

using State4 = Eigen::Vector4d; // [r, theta, v_r, v_theta]
using Matrix4 = Eigen::Matrix4d;

struct FilterState
{
    State4 q = State4::Zero();
    Matrix4 covariance = Matrix4::Zero();
    std::size_t cpi = 0;

    MotionState motion() const { return {{q[1], q[0]}, q[2], q[3]}; }
};

State4 to_state(const MotionState &motion);

struct ProcessNoise
{
    Matrix4 covariance = Matrix4::Zero();

    static ProcessNoise diagonal(double r, double theta, double v_r, double v_theta);
};

struct Measurement
{
    CVector y;                   // sample at t = T_c / 2
    double noise_variance = 0.0; // R_w = noise_variance * I
    std::optional<cplx> source;  // s_i; estimated from the prior when absent
};

// Filter diverged; carries the last state that passed all checks.
class FilterDivergence : public std::runtime_error
{
public:
    FilterDivergence(const std::string &message, FilterState last_valid)
        : std::runtime_error(message), last_valid_(std::move(last_valid)) {}
    const FilterState &last_valid() const { return last_valid_; }

private:
    FilterState last_valid_;
};

// r' = r + v_r T_c, theta' = theta + v_theta T_c / r. Throws TargetPassedOrigin
// when r' <= 0.
State4 state_transition(const State4 &q, double cpi);

// g(q) = a(theta, r) .* d(v_theta, v_r, T_c / 2)
CVector observation_fn(const State4 &q, const ArraySetup &setup, double cpi);

Matrix4 jacobian_state(const State4 &q, double cpi);

enum class JacobianMethod
{
    analytic, // exact-distance model; other distance models fall back to finite differences
    finite_difference
};

// d(g(q) s) / dq, N x 4.
CMatrix jacobian_obs(const State4 &q, cplx source, const ArraySetup &setup, double cpi,
                     JacobianMethod method = JacobianMethod::analytic);

// Least-squares source estimate g^H y / |g|^2. Throws InvalidState when g = 0.
cplx estimate_source_signal(const CVector &y, const State4 &q_prior, const ArraySetup &setup, double cpi);

enum class GainStep
{
    fixed,       // 1 / lambda_max(V)^2
    line_search, // exact minimizer along the gradient
    conjugate    // conjugate gradients on the normal equations
};

struct GainSolve
{
    CMatrix gain;
    std::size_t iterations = 0;
    bool converged = false;
    double residual = 0.0; // |K V - E|_F / |E|_F
};

// Gradient descent on |K V - E|_F^2 with V = G Q G^H + R_w, E = Q G^H,
// started from K = 0.
GainSolve kalman_gain_gd(const CMatrix &prior_covariance, const CMatrix &jacobian, const CMatrix &noise_covariance,
                         std::size_t iterations, GainStep rule = GainStep::conjugate, double tolerance = 1e-10);

enum class GainMethod
{
    closed_form,
    gradient
};

struct EkfConfig
{
    double cpi = 1e-3; // T_c
    JacobianMethod jacobian = JacobianMethod::analytic;
    GainMethod gain = GainMethod::closed_form;
    std::size_t gradient_iterations = 200;
    double max_condition = 1e12;
    double max_trace = 1e8; // covariance trace cap
};

struct EkfStep
{
    FilterState prior;
    FilterState posterior;
    cplx source{0.0, 0.0}; // s_i used for the update
    double nis = 0.0;      // normalized innovation squared (real-composite, expectation 2N)
    double condition = 1.0;
};

// One predict/linearize/update cycle on the real-composite measurement
// [Re y; Im y] with covariance (sigma^2 / 2) I.
EkfStep ekf_step(const FilterState &state, const Measurement &measurement, const ProcessNoise &noise,
                 const ArraySetup &setup, const EkfConfig &config);

struct Trajectory
{
    std::vector<FilterState> states; // one per measurement
    std::vector<double> nis;
    std::vector<cplx> sources;
    std::size_t reinitializations = 0;
};

// Called with the CPI index and the failing step's error; returns a fresh
// filter state to continue from.
using Reinitializer = std::function<FilterState(std::size_t, const FilterDivergence &)>;

Trajectory track(std::span<const Measurement> measurements, const FilterState &initial, const ProcessNoise &noise,
                 const ArraySetup &setup, const EkfConfig &config, const Reinitializer &reinit = {});

// ---- single-CPI multi-dimensional DML --------------------------------------

struct MotionGrid
{
    GridAxis theta;
    GridAxis range;
    GridAxis radial_velocity;
    GridAxis transverse_velocity;

    std::size_t cells() const
    {
        return theta.size() * range.size() * radial_velocity.size() * transverse_velocity.size();
    }
};

struct MotionEstimate
{
    MotionState motion;
    double value = 0.0;
    std::array<std::size_t, 4> index{}; // theta, range, v_r, v_theta
};

// Single-target DML over L samples taken at t_l = l T_s with a free source
// value per sample: sum_l |a_o,l^H y_l|^2 / |a_o,l|^2.
double moving_dml_objective(const CMatrix &snapshots, double sample_interval, const ArraySetup &setup,
                            const MotionState &motion);

MotionEstimate moving_dml_single(const CMatrix &snapshots, double sample_interval, const ArraySetup &setup,
                                 const MotionGrid &grid, std::size_t max_cells = 10'000'000);

} // namespace nearfield
