#include "nearfield/analysis.hpp"

#include <cmath>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>
#include <Eigen/Eigenvalues>

namespace nearfield
{

namespace
{
void check_crb_inputs(const CrbInputs &in)
{
    if (in.antennas < 3)
        throw std::invalid_argument("closed-form CRBs need N >= 3");
    if (!(in.spacing > 0.0) || !(in.wavelength > 0.0))
        throw std::invalid_argument("spacing and wavelength must be positive");
    if (in.samples < 1)
        throw std::invalid_argument("CRB needs L >= 1");
    if (!(in.snr > 0.0))
        throw std::invalid_argument("CRB needs a positive SNR");
}

double sin_checked(double theta)
{
    const double s = std::sin(theta);
    if (!(theta > 0.0 && theta < kPi) || s == 0.0)
        throw SingularGeometry("sin(theta) = 0: direction must lie strictly inside (0, pi)");
    return s;
}

double n1_of(double n) { return (8.0 * n - 11.0) * (2.0 * n - 1.0); }
double n2_of(double n) { return n * (n * n - 1.0) * (n * n - 4.0); }
} // namespace

double crb_gamma_bar(const CrbInputs &in)
{
    return in.snr * in.spacing * in.spacing / (in.wavelength * in.wavelength);
}

double crb_theta(const CrbInputs &in, double theta)
{
    check_crb_inputs(in);
    const double s = sin_checked(theta);
    const double n = static_cast<double>(in.antennas);
    const double l = static_cast<double>(in.samples);
    return 3.0 * n1_of(n) / (2.0 * crb_gamma_bar(in) * l * n2_of(n) * kPi * kPi * s * s);
}

double crb_r(const CrbInputs &in, double theta, double r)
{
    check_crb_inputs(in);
    if (!(r > 0.0))
        throw std::invalid_argument("CRB range must be positive");
    const double s = sin_checked(theta);
    const double c = std::cos(theta);
    const double n = static_cast<double>(in.antennas);
    const double l = static_cast<double>(in.samples);
    const double d = in.spacing;
    const double num = 6.0 * r * r * (15.0 * r * r + 30.0 * r * d * (n - 1.0) * c + d * d * n1_of(n) * c * c);
    return num / (crb_gamma_bar(in) * l * n2_of(n) * kPi * kPi * d * d * s * s * s * s);
}

CrbResult crb(const CrbInputs &in, double theta, double r)
{
    const double n = static_cast<double>(in.antennas);
    return {in, theta, r, crb_theta(in, theta), crb_r(in, theta, r), crb_gamma_bar(in), n1_of(n), n2_of(n)};
}

// ---- FIM ---------------------------------------------------------------------

FimResult fim_numerical(const ResponseModel &model, const RVector &point, double snr, SourceKnowledge source,
                        double relative_step)
{
    const auto p = point.size();
    if (p == 0 || static_cast<std::size_t>(p) != model.names.size())
        throw std::invalid_argument("parameter point does not match the model");
    if (!(snr > 0.0))
        throw std::invalid_argument("FIM needs a positive SNR");

    std::vector<double> steps(static_cast<std::size_t>(p));
    for (Eigen::Index i = 0; i < p; ++i)
    {
        const double scale = model.scales.empty() ? 1.0 : model.scales[static_cast<std::size_t>(i)];
        const double h = relative_step * std::max(std::abs(point[i]), scale);
        if (!(h > 0.0) || point[i] + h == point[i] || point[i] - h == point[i])
            throw std::invalid_argument("finite-difference step underflows for parameter " +
                                        model.names[static_cast<std::size_t>(i)]);
        steps[static_cast<std::size_t>(i)] = h;
    }

    RMatrix f = RMatrix::Zero(p, p);
    for (const double t : model.times)
    {
        const CVector m = model.mean(point, t);
        CMatrix d(m.size(), p);
        for (Eigen::Index i = 0; i < p; ++i)
        {
            RVector plus = point, minus = point;
            const double h = steps[static_cast<std::size_t>(i)];
            plus[i] += h;
            minus[i] -= h;
            d.col(i) = (model.mean(plus, t) - model.mean(minus, t)) / (2.0 * h);
        }
        if (source == SourceKnowledge::nuisance)
        {
            const double energy = m.squaredNorm();
            if (energy > 0.0)
                d -= m * (m.adjoint() * d) / energy;
        }
        f += (d.adjoint() * d).real();
    }
    f *= 2.0 * snr * model.repeats;
    f = 0.5 * (f + f.transpose()).eval();

    FimResult out;
    out.fim = f;
    Eigen::SelfAdjointEigenSolver<RMatrix> raw(f, Eigen::EigenvaluesOnly);
    out.eigenvalues = raw.eigenvalues();
    const double top = out.eigenvalues.maxCoeff();
    out.eigen_ratio = top > 0.0 ? out.eigenvalues.minCoeff() / top : 0.0;

    RVector inv_sqrt(p);
    bool vanishing = false;
    for (Eigen::Index i = 0; i < p; ++i)
    {
        if (f(i, i) > 0.0)
            inv_sqrt[i] = 1.0 / std::sqrt(f(i, i));
        else
        {
            inv_sqrt[i] = 0.0;
            vanishing = true;
        }
    }
    const RMatrix scaled = inv_sqrt.asDiagonal() * f * inv_sqrt.asDiagonal();
    Eigen::SelfAdjointEigenSolver<RMatrix> norm(scaled, Eigen::EigenvaluesOnly);
    out.scaled_eigenvalues = norm.eigenvalues();
    const double scaled_top = out.scaled_eigenvalues.maxCoeff();
    out.scaled_ratio =
        vanishing || !(scaled_top > 0.0) ? 0.0 : std::max(out.scaled_eigenvalues.minCoeff(), 0.0) / scaled_top;
    return out;
}

ResponseModel fixed_response_model(const ArraySetup &setup, std::size_t samples)
{
    ResponseModel model;
    model.names = {"theta", "r"};
    model.mean = [setup](const RVector &x, double) { return setup.steering_vector(x[0], x[1]); };
    model.times = {0.0};
    model.repeats = static_cast<double>(samples);
    model.scales = {1.0, 1.0};
    return model;
}

ResponseModel near_field_moving_model(const ArraySetup &setup, std::size_t samples, double sample_interval)
{
    ResponseModel model;
    model.names = {"theta", "r", "v_r", "v_theta"};
    model.mean = [setup](const RVector &x, double t) {
        const MotionState m{{x[0], x[1]}, x[2], x[3]};
        return moving_response(setup.geometry, setup.waveform, m, t, setup.steering);
    };
    model.times.clear();
    for (std::size_t l = 1; l <= samples; ++l)
        model.times.push_back(static_cast<double>(l) * sample_interval);
    model.scales = {1.0, 1.0, 1.0, 1.0};
    return model;
}

ResponseModel far_field_moving_model(const ArraySetup &setup, std::size_t samples, double sample_interval)
{
    ResponseModel model;
    model.names = {"theta", "v_r", "v_theta"};
    const double k = setup.waveform.wavenumber();
    model.mean = [setup, k](const RVector &x, double t) {
        CVector b = far_field_steering(setup.geometry, setup.waveform, x[0]);
        return CVector(b * std::polar(1.0, -k * x[1] * t));
    };
    model.times.clear();
    for (std::size_t l = 1; l <= samples; ++l)
        model.times.push_back(static_cast<double>(l) * sample_interval);
    model.scales = {1.0, 1.0, 1.0};
    return model;
}

// ---- ambiguity -----------------------------------------------------------------

cplx ambiguity(double theta, double r, double theta0, double r0, const ArraySetup &setup)
{
    return setup.steering_vector(theta, r).dot(setup.steering_vector(theta0, r0));
}

cplx lambda1(double vartheta, double vartheta0, std::size_t antennas, double spacing, double wavelength)
{
    const double n = static_cast<double>(antennas);
    const double x = kPi * spacing * (vartheta - vartheta0) / wavelength;
    const double den = std::sin(x);
    if (std::abs(den) < 1e-8)
        return {n * std::cos(n * x) / std::cos(x), 0.0};
    return {std::sin(n * x) / den, 0.0};
}

FresnelPair fresnel_integrals(double x)
{
    if (x < 0.0)
    {
        const auto p = fresnel_integrals(-x);
        return {-p.c, -p.s};
    }
    if (x == 0.0)
        return {0.0, 0.0};
    if (std::isinf(x))
        return {0.5, 0.5};

    using boost::math::quadrature::gauss_kronrod;
    constexpr double tol = 1e-13;
    if (x <= 4.0)
    {
        const double c = gauss_kronrod<double, 61>::integrate(
            [](double t) { return std::cos(0.5 * kPi * t * t); }, 0.0, x, 20, tol);
        const double s = gauss_kronrod<double, 61>::integrate(
            [](double t) { return std::sin(0.5 * kPi * t * t); }, 0.0, x, 20, tol);
        return {c, s};
    }

    // Rotate the tail integral onto x + j w, where it decays like exp(-pi x w):
    // C + jS = (1 + j)/2 - j exp(j pi x^2 / 2) int_0^inf exp(-pi x w) exp(-j pi w^2 / 2) dw.
    boost::math::quadrature::exp_sinh<double> integrator;
    const double re = integrator.integrate(
        [x](double w) { return std::exp(-kPi * x * w) * std::cos(0.5 * kPi * w * w); }, tol);
    const double im = integrator.integrate(
        [x](double w) { return -std::exp(-kPi * x * w) * std::sin(0.5 * kPi * w * w); }, tol);
    const cplx tail = cplx(0.0, 1.0) * std::polar(1.0, 0.5 * kPi * x * x) * cplx(re, im);
    const cplx value = cplx(0.5, 0.5) - tail;
    return {value.real(), value.imag()};
}

double fresnel_argument(double r, double theta0, double r0, std::size_t antennas, double spacing,
                        double wavelength)
{
    if (!(r > 0.0) || !(r0 > 0.0))
        throw std::invalid_argument("ranges must be positive");
    const double n = static_cast<double>(antennas);
    const double s = std::sin(theta0);
    return std::sqrt(n * n * spacing * spacing * s * s / (2.0 * wavelength) * std::abs(1.0 / r - 1.0 / r0));
}

cplx lambda2(double r, double theta0, double r0, std::size_t antennas, double spacing, double wavelength)
{
    const double eta = fresnel_argument(r, theta0, r0, antennas, spacing, wavelength);
    const double n = static_cast<double>(antennas);
    if (eta < 1e-8)
        return {n, 0.0};
    const auto p = fresnel_integrals(eta);
    return cplx(p.c, p.s) * (n / eta);
}

double hpmw_direction(std::size_t antennas, double spacing, double wavelength)
{
    return 1.4 * wavelength / (kPi * static_cast<double>(antennas) * spacing);
}

double threshold_distance(std::size_t antennas, double spacing, double wavelength, double theta0)
{
    const double n = static_cast<double>(antennas);
    const double s = std::sin(theta0);
    return n * n * spacing * spacing * s * s / (5.0 * wavelength);
}

DistanceInterval hpmw_distance(double r0, double d_t)
{
    if (!(r0 > 0.0) || !(d_t >= 0.0))
        throw std::invalid_argument("hpmw_distance needs r0 > 0 and d_T >= 0");
    DistanceInterval out;
    out.lower = -r0 * r0 / (d_t + r0);
    out.upper = r0 >= d_t ? std::numeric_limits<double>::infinity() : r0 * r0 / (d_t - r0);
    return out;
}

namespace
{
template <class F> double bracket_root(F f, double lo, double hi)
{
    boost::uintmax_t iterations = 200;
    const auto result = boost::math::tools::toms748_solve(f, lo, hi, boost::math::tools::eps_tolerance<double>(50),
                                                          iterations);
    return 0.5 * (result.first + result.second);
}
} // namespace

double half_power_direction_numeric(std::size_t antennas, double spacing, double wavelength)
{
    const double n = static_cast<double>(antennas);
    const auto f = [&](double dv) {
        return std::norm(lambda1(dv, 0.0, antennas, spacing, wavelength)) - 0.5 * n * n;
    };
    // The first null sits at lambda / (N d).
    return bracket_root(f, 0.0, wavelength / (n * spacing));
}

double half_power_eta()
{
    const auto f = [](double eta) {
        if (eta == 0.0)
            return 0.5;
        const auto p = fresnel_integrals(eta);
        return (p.c * p.c + p.s * p.s) / (eta * eta) - 0.5;
    };
    return bracket_root(f, 0.0, 2.0);
}

DistanceInterval half_power_distance_numeric(double r0, double theta0, std::size_t antennas, double spacing,
                                             double wavelength)
{
    const double eta = half_power_eta();
    const double n = static_cast<double>(antennas);
    const double s = std::sin(theta0);
    const double delta = 2.0 * wavelength * eta * eta / (n * n * spacing * spacing * s * s); // in 1/r
    DistanceInterval out;
    out.lower = 1.0 / (1.0 / r0 + delta) - r0;
    const double far = 1.0 / r0 - delta;
    out.upper = far > 0.0 ? 1.0 / far - r0 : std::numeric_limits<double>::infinity();
    return out;
}

ResolutionReport resolution(double theta0, double r0, std::size_t antennas, double spacing, double wavelength)
{
    ResolutionReport out;
    out.direction_halfwidth = hpmw_direction(antennas, spacing, wavelength);
    out.threshold = threshold_distance(antennas, spacing, wavelength, theta0);
    out.distance = hpmw_distance(r0, out.threshold);
    out.fraunhofer = fraunhofer_distance(static_cast<double>(antennas - 1) * spacing, wavelength);
    return out;
}

} // namespace nearfield
