#include "nearfield/tracking.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace nearfield
{

State4 to_state(const MotionState &motion)
{
    return {motion.target.range, motion.target.theta, motion.radial_velocity, motion.transverse_velocity};
}

ProcessNoise ProcessNoise::diagonal(double r, double theta, double v_r, double v_theta)
{
    if (r < 0.0 || theta < 0.0 || v_r < 0.0 || v_theta < 0.0)
        throw std::invalid_argument("process noise variances must be non-negative");
    ProcessNoise out;
    out.covariance.diagonal() << r, theta, v_r, v_theta;
    return out;
}

State4 state_transition(const State4 &q, double cpi)
{
    if (!(q[0] > 0.0))
        throw std::invalid_argument("state range must be positive");
    State4 next = q;
    next[0] = q[0] + q[2] * cpi;
    next[1] = q[1] + q[3] * cpi / q[0];
    if (!(next[0] > 0.0))
        throw TargetPassedOrigin("state transition moved the target through the array origin");
    return next;
}

Matrix4 jacobian_state(const State4 &q, double cpi)
{
    const double r = q[0];
    Matrix4 h = Matrix4::Identity();
    h(0, 2) = cpi;
    h(1, 0) = -q[3] * cpi / (r * r);
    h(1, 3) = cpi / r;
    return h;
}

CVector observation_fn(const State4 &q, const ArraySetup &setup, double cpi)
{
    const MotionState motion{{q[1], q[0]}, q[2], q[3]};
    const CVector a = setup.steering_vector(q[1], q[0]);
    const RVector v = antenna_velocities(setup.geometry, motion);
    const double k = setup.waveform.wavenumber();
    const double t = 0.5 * cpi;
    CVector g(a.size());
    for (Eigen::Index n = 0; n < a.size(); ++n)
        g[n] = a[n] * std::polar(1.0, -k * v[n] * t);
    return g;
}

namespace
{
CMatrix jacobian_obs_fd(const State4 &q, cplx source, const ArraySetup &setup, double cpi)
{
    const auto n = static_cast<Eigen::Index>(setup.size());
    CMatrix jac(n, 4);
    for (int c = 0; c < 4; ++c)
    {
        const double h = 1e-6 * std::max(std::abs(q[c]), c == 1 ? 1.0 : 1e-3);
        State4 plus = q, minus = q;
        plus[c] += h;
        minus[c] -= h;
        jac.col(c) = source * (observation_fn(plus, setup, cpi) - observation_fn(minus, setup, cpi)) / (2.0 * h);
    }
    return jac;
}
} // namespace

CMatrix jacobian_obs(const State4 &q, cplx source, const ArraySetup &setup, double cpi, JacobianMethod method)
{
    if (method == JacobianMethod::finite_difference || setup.steering.distance != DistanceModel::exact)
        return jacobian_obs_fd(q, source, setup, cpi);

    const double r = q[0], theta = q[1], vr = q[2], vt = q[3];
    const Point2 u = direction_vector(theta);
    const Point2 up = transverse_vector(theta);
    const double k = setup.waveform.wavenumber();
    const double t = 0.5 * cpi;
    const bool amplitude = setup.steering.include_amplitude;

    const CVector g = observation_fn(q, setup, cpi);
    const auto count = static_cast<Eigen::Index>(setup.size());
    CMatrix jac(count, 4);
    for (Eigen::Index n = 0; n < count; ++n)
    {
        const Point2 &s = setup.geometry.position(static_cast<std::size_t>(n));
        const double a = r - s.dot(u);
        const double b = s.dot(up);
        const double rn = exact_distance(s, theta, r);
        const double vn = (a * vr - b * vt) / rn;

        const double drn_dr = a / rn;
        const double drn_dth = -r * b / rn;
        const double dvn_dr = vr / rn - vn * a / (rn * rn);
        const double dvn_dth = (-b * vr + s.dot(u) * vt) / rn - vn * drn_dth / rn;
        const double dvn_dvr = a / rn;
        const double dvn_dvt = -b / rn;

        // d(phase)/dx with phase = -k (r_n - r) - k v_n t; plus d(log amplitude)/dx.
        double phase[4] = {-k * (drn_dr - 1.0) - k * t * dvn_dr, -k * drn_dth - k * t * dvn_dth, -k * t * dvn_dvr,
                           -k * t * dvn_dvt};
        double log_amp[4] = {0.0, 0.0, 0.0, 0.0};
        if (amplitude)
        {
            log_amp[0] = 1.0 / r - drn_dr / rn;
            log_amp[1] = -drn_dth / rn;
        }
        const cplx gs = g[n] * source;
        for (int c = 0; c < 4; ++c)
            jac(n, c) = gs * cplx(log_amp[c], phase[c]);
    }
    return jac;
}

cplx estimate_source_signal(const CVector &y, const State4 &q_prior, const ArraySetup &setup, double cpi)
{
    const CVector g = observation_fn(q_prior, setup, cpi);
    const double energy = g.squaredNorm();
    if (!(energy > 0.0))
        throw InvalidState("response vector is zero; cannot estimate the source signal");
    return g.dot(y) / energy; // Eigen's dot conjugates the first argument
}

// ---- gradient-descent gain -------------------------------------------------

namespace
{
double largest_eigenvalue_power(const CMatrix &v)
{
    CVector x = CVector::Ones(v.rows()) / std::sqrt(static_cast<double>(v.rows()));
    double lambda = 0.0;
    for (int it = 0; it < 500; ++it)
    {
        CVector y = v * x;
        const double norm = y.norm();
        if (!(norm > 0.0))
            return 0.0;
        const double next = norm;
        x = y / norm;
        if (std::abs(next - lambda) <= 1e-12 * next)
            return next;
        lambda = next;
    }
    return lambda;
}
} // namespace

GainSolve kalman_gain_gd(const CMatrix &prior_covariance, const CMatrix &jacobian, const CMatrix &noise_covariance,
                         std::size_t iterations, GainStep rule, double tolerance)
{
    const CMatrix e = prior_covariance * jacobian.adjoint();
    CMatrix v = jacobian * e + noise_covariance;
    v = 0.5 * (v + v.adjoint());

    GainSolve out;
    out.gain = CMatrix::Zero(e.rows(), e.cols());
    const double e_norm = e.norm();
    if (!(e_norm > 0.0))
    {
        out.converged = iterations > 0;
        return out;
    }
    CMatrix residual = -e; // K V - E at K = 0
    out.residual = 1.0;
    if (iterations == 0)
        return out;

    const double fixed_step = rule == GainStep::fixed ? 1.0 / std::pow(largest_eigenvalue_power(v), 2) : 0.0;
    CMatrix gradient = residual * v.adjoint();
    CMatrix direction = -gradient;
    double gradient_sq = gradient.squaredNorm();

    for (std::size_t it = 1; it <= iterations; ++it)
    {
        out.iterations = it;
        if (rule == GainStep::conjugate)
        {
            const CMatrix dv = direction * v;
            const double denom = dv.squaredNorm();
            if (!(denom > 0.0))
                break;
            const double alpha = gradient_sq / denom;
            out.gain += alpha * direction;
            residual += alpha * dv;
            const CMatrix next_gradient = residual * v.adjoint();
            const double next_sq = next_gradient.squaredNorm();
            direction = -next_gradient + (next_sq / gradient_sq) * direction;
            gradient_sq = next_sq;
        }
        else
        {
            double alpha = fixed_step;
            if (rule == GainStep::line_search)
            {
                const double denom = (gradient * v).squaredNorm();
                if (!(denom > 0.0))
                    break;
                alpha = gradient_sq / denom;
            }
            out.gain -= alpha * gradient;
            residual = out.gain * v - e;
            gradient = residual * v.adjoint();
            gradient_sq = gradient.squaredNorm();
        }
        out.residual = residual.norm() / e_norm;
        if (out.residual <= tolerance)
        {
            out.converged = true;
            break;
        }
    }
    return out;
}

// ---- EKF -------------------------------------------------------------------

EkfStep ekf_step(const FilterState &state, const Measurement &measurement, const ProcessNoise &noise,
                 const ArraySetup &setup, const EkfConfig &config)
{
    const auto n = static_cast<Eigen::Index>(setup.size());
    if (measurement.y.size() != n)
        throw std::invalid_argument("measurement length does not match the array");
    if (!measurement.y.allFinite())
        throw std::invalid_argument("measurement contains non-finite entries");
    if (!(measurement.noise_variance >= 0.0))
        throw std::invalid_argument("measurement noise variance must be non-negative");

    EkfStep out;
    // Steps 1-3: prediction.
    const Matrix4 h = jacobian_state(state.q, config.cpi);
    out.prior.q = state_transition(state.q, config.cpi);
    out.prior.covariance = h * state.covariance * h.transpose() + noise.covariance;
    out.prior.covariance = 0.5 * (out.prior.covariance + out.prior.covariance.transpose()).eval();
    out.prior.cpi = state.cpi + 1;
    if (!(out.prior.q[1] > 0.0 && out.prior.q[1] < kPi))
        throw FilterDivergence("predicted direction left (0, pi)", state);

    out.source = measurement.source ? *measurement.source
                                    : estimate_source_signal(measurement.y, out.prior.q, setup, config.cpi);

    const CMatrix g = jacobian_obs(out.prior.q, out.source, setup, config.cpi, config.jacobian);
    const CVector innovation = measurement.y - observation_fn(out.prior.q, setup, config.cpi) * out.source;

    // Real-composite form.
    Eigen::MatrixXd gr(2 * n, 4);
    gr.topRows(n) = g.real();
    gr.bottomRows(n) = g.imag();
    RVector nu(2 * n);
    nu.head(n) = innovation.real();
    nu.tail(n) = innovation.imag();
    const double half_variance = 0.5 * measurement.noise_variance;

    // cond(G Q G^T + s I) = 1 + mu_max / s with mu the eigenvalues of Q^1/2 G^T G Q^1/2.
    const Matrix4 &qp = out.prior.covariance;
    Eigen::SelfAdjointEigenSolver<Matrix4> q_eig(qp);
    const Matrix4 q_half = q_eig.eigenvectors() * q_eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                           q_eig.eigenvectors().transpose();
    const Matrix4 gram = gr.transpose() * gr;
    const double mu_max = Eigen::SelfAdjointEigenSolver<Matrix4>(q_half * gram * q_half, Eigen::EigenvaluesOnly)
                              .eigenvalues()
                              .maxCoeff();
    out.condition = half_variance > 0.0 ? 1.0 + std::max(mu_max, 0.0) / half_variance
                                        : (mu_max > 0.0 ? std::numeric_limits<double>::infinity() : 1.0);
    if (!(out.condition <= config.max_condition) || (half_variance == 0.0 && mu_max == 0.0))
        throw FilterDivergence("innovation covariance is ill-conditioned (condition " +
                                   std::to_string(out.condition) + ")",
                               state);

    // Step 4: gain.
    Eigen::MatrixXd s = gr * qp * gr.transpose();
    s.diagonal().array() += half_variance;
    const Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success)
        throw FilterDivergence("innovation covariance is not positive definite", state);

    Eigen::MatrixXd gain; // 4 x 2N
    if (config.gain == GainMethod::closed_form)
        gain = llt.solve(gr * qp).transpose();
    else
    {
        const CMatrix r_w = CMatrix::Identity(2 * n, 2 * n) * half_variance;
        const auto solve = kalman_gain_gd(qp.cast<cplx>(), gr.cast<cplx>(), r_w, config.gradient_iterations,
                                          GainStep::conjugate, 1e-12);
        gain = solve.gain.real();
    }

    // Step 5: update.
    out.posterior.q = out.prior.q + gain * nu;
    const Matrix4 ikg = Matrix4::Identity() - gain * gr;
    out.posterior.covariance = ikg * qp;
    out.posterior.covariance = 0.5 * (out.posterior.covariance + out.posterior.covariance.transpose()).eval();
    out.posterior.cpi = out.prior.cpi;
    out.nis = nu.dot(llt.solve(nu));

    const double trace = out.posterior.covariance.trace();
    if (!out.posterior.q.allFinite() || !(trace <= config.max_trace))
        throw FilterDivergence("posterior covariance trace exceeded the cap", state);
    if (!(out.posterior.q[0] > 0.0) || !(out.posterior.q[1] > 0.0 && out.posterior.q[1] < kPi))
        throw FilterDivergence("posterior state left the valid region", state);
    const double floor = Eigen::SelfAdjointEigenSolver<Matrix4>(out.posterior.covariance, Eigen::EigenvaluesOnly)
                             .eigenvalues()
                             .minCoeff();
    if (floor < -1e-10 * std::max(trace, 0.0))
        throw FilterDivergence("posterior covariance lost positive semidefiniteness", state);
    return out;
}

Trajectory track(std::span<const Measurement> measurements, const FilterState &initial, const ProcessNoise &noise,
                 const ArraySetup &setup, const EkfConfig &config, const Reinitializer &reinit)
{
    if (measurements.empty())
        throw std::invalid_argument("track: empty measurement sequence");
    Trajectory out;
    out.states.reserve(measurements.size());
    FilterState current = initial;
    for (std::size_t i = 0; i < measurements.size(); ++i)
    {
        try
        {
            const EkfStep step = ekf_step(current, measurements[i], noise, setup, config);
            current = step.posterior;
            out.nis.push_back(step.nis);
            out.sources.push_back(step.source);
        }
        catch (const FilterDivergence &error)
        {
            if (!reinit)
                throw FilterDivergence("CPI " + std::to_string(i) + ": " + error.what(), error.last_valid());
            current = reinit(i, error);
            ++out.reinitializations;
            out.nis.push_back(std::numeric_limits<double>::quiet_NaN());
            out.sources.push_back(cplx(0.0, 0.0));
        }
        catch (const TargetPassedOrigin &error)
        {
            throw TargetPassedOrigin("CPI " + std::to_string(i) + ": " + error.what());
        }
        out.states.push_back(current);
    }
    return out;
}

// ---- multi-dimensional DML -------------------------------------------------

double moving_dml_objective(const CMatrix &snapshots, double sample_interval, const ArraySetup &setup,
                            const MotionState &motion)
{
    const CVector a = setup.steering_vector(motion.target.theta, motion.target.range);
    const RVector v = antenna_velocities(setup.geometry, motion);
    const double k = setup.waveform.wavenumber();
    const double energy = a.squaredNorm();
    double total = 0.0;
    CVector column(a.size());
    for (Eigen::Index l = 0; l < snapshots.cols(); ++l)
    {
        const double t = static_cast<double>(l + 1) * sample_interval;
        for (Eigen::Index n = 0; n < a.size(); ++n)
            column[n] = a[n] * std::polar(1.0, -k * v[n] * t);
        total += std::norm(column.dot(snapshots.col(l))) / energy;
    }
    return total;
}

MotionEstimate moving_dml_single(const CMatrix &snapshots, double sample_interval, const ArraySetup &setup,
                                 const MotionGrid &grid, std::size_t max_cells)
{
    const std::size_t cells = grid.cells();
    if (cells == 0)
        throw std::invalid_argument("moving DML grid is empty");
    if (cells > max_cells)
        throw std::invalid_argument("moving DML grid has " + std::to_string(cells) + " cells, budget is " +
                                    std::to_string(max_cells));
    if (static_cast<std::size_t>(snapshots.rows()) != setup.size())
        throw std::invalid_argument("snapshot rows do not match the array size");

    MotionEstimate best;
    best.value = -1.0;
    for (std::size_t i = 0; i < grid.theta.size(); ++i)
        for (std::size_t j = 0; j < grid.range.size(); ++j)
            for (std::size_t a = 0; a < grid.radial_velocity.size(); ++a)
                for (std::size_t b = 0; b < grid.transverse_velocity.size(); ++b)
                {
                    const MotionState m{{grid.theta.values[i], grid.range.values[j]},
                                        grid.radial_velocity.values[a],
                                        grid.transverse_velocity.values[b]};
                    const double value = moving_dml_objective(snapshots, sample_interval, setup, m);
                    if (value > best.value)
                    {
                        best.value = value;
                        best.motion = m;
                        best.index = {i, j, a, b};
                    }
                }
    return best;
}

} // namespace nearfield
