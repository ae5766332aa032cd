#include "nearfield/array_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nearfield/random.hpp"

namespace nearfield
{

Waveform::Waveform(double carrier_hz) : carrier_hz_(carrier_hz)
{
    if (!(carrier_hz > 0.0) || !std::isfinite(carrier_hz))
        throw std::invalid_argument("carrier frequency must be positive and finite");
}

// ---- geometry ----------------------------------------------------------

ArrayGeometry::ArrayGeometry(std::vector<Point2> positions) : positions_(std::move(positions)), aperture_(0.0)
{
    if (positions_.empty())
        throw std::invalid_argument("array geometry needs at least one antenna");
    for (const auto &p : positions_)
        if (!p.allFinite())
            throw std::invalid_argument("antenna positions must be finite");
    for (std::size_t m = 0; m < positions_.size(); ++m)
        for (std::size_t n = m + 1; n < positions_.size(); ++n)
            aperture_ = std::max(aperture_, (positions_[m] - positions_[n]).norm());
}

ArrayGeometry ArrayGeometry::ula(std::size_t count, double spacing, UlaReference reference)
{
    if (count == 0)
        throw std::invalid_argument("ULA needs at least one antenna");
    if (!(spacing > 0.0))
        throw std::invalid_argument("ULA spacing must be positive");
    std::vector<Point2> positions(count);
    const double shift = reference == UlaReference::center ? 0.5 * static_cast<double>(count - 1) : 0.0;
    for (std::size_t n = 0; n < count; ++n)
        positions[n] = {(static_cast<double>(n) - shift) * spacing, 0.0};
    return ArrayGeometry(std::move(positions));
}

SymmetricUla::SymmetricUla(std::size_t half_size, double spacing)
    : half_size_(half_size), spacing_(spacing),
      geometry_(ArrayGeometry::ula(2 * half_size + 1, spacing > 0.0 ? spacing : 1.0, UlaReference::center))
{
    if (!(spacing > 0.0))
        throw std::invalid_argument("symmetric ULA spacing must be positive");
}

void validate_target(const TargetState &target)
{
    if (!(target.theta > 0.0 && target.theta < kPi))
        throw std::invalid_argument("target direction must lie in (0, pi), got " + std::to_string(target.theta));
    if (!(target.range > 0.0) || !std::isfinite(target.range))
        throw std::invalid_argument("target range must be positive and finite");
}

// ---- distances ---------------------------------------------------------

double fraunhofer_distance(double aperture, double wavelength)
{
    if (!(wavelength > 0.0))
        throw std::invalid_argument("wavelength must be positive");
    if (aperture < 0.0)
        throw std::invalid_argument("aperture must be non-negative");
    return 2.0 * aperture * aperture / wavelength;
}

double fresnel_region_start(double aperture, double wavelength)
{
    if (!(wavelength > 0.0))
        throw std::invalid_argument("wavelength must be positive");
    return 0.5 * std::sqrt(aperture * aperture * aperture / wavelength);
}

cplx radiating_field_gain(double r, double wavelength, double impedance)
{
    if (!(r > 0.0))
        throw std::invalid_argument("field distance must be positive");
    if (!(wavelength > 0.0))
        throw std::invalid_argument("wavelength must be positive");
    const cplx j(0.0, 1.0);
    return -j * impedance * std::polar(1.0, -kTwoPi * r / wavelength) / (2.0 * wavelength * r);
}

double exact_distance(const Point2 &antenna, const Point2 &target)
{
    return (antenna - target).norm();
}

double exact_distance(const Point2 &antenna, double theta, double r)
{
    const double projection = antenna.dot(direction_vector(theta));
    const double squared = r * r - 2.0 * r * projection + antenna.squaredNorm();
    return std::sqrt(std::max(squared, 0.0));
}

double farfield_distance(const Point2 &antenna, double theta, double r)
{
    return r - antenna.dot(direction_vector(theta));
}

double fresnel_distance(double offset, double theta, double r)
{
    const double s = std::sin(theta);
    return r - offset * std::cos(theta) + offset * offset * s * s / (2.0 * r);
}

double fresnel_distance(const Point2 &antenna, double theta, double r)
{
    const double projection = antenna.dot(direction_vector(theta));
    return r - projection + (antenna.squaredNorm() - projection * projection) / (2.0 * r);
}

// ---- response vectors --------------------------------------------------

namespace
{
double model_distance(const Point2 &antenna, double theta, double r, DistanceModel model)
{
    switch (model)
    {
    case DistanceModel::exact:
        return exact_distance(antenna, theta, r);
    case DistanceModel::fresnel:
        return fresnel_distance(antenna, theta, r);
    case DistanceModel::planar:
        return farfield_distance(antenna, theta, r);
    }
    return 0.0;
}
} // namespace

CVector near_field_steering(const ArrayGeometry &geometry, const Waveform &waveform, double theta, double r,
                            const SteeringOptions &options)
{
    if (!(r > 0.0))
        throw std::invalid_argument("steering distance must be positive");
    const double k = waveform.wavenumber();
    CVector a(static_cast<Eigen::Index>(geometry.size()));
    for (std::size_t n = 0; n < geometry.size(); ++n)
    {
        const double rn = model_distance(geometry.position(n), theta, r, options.distance);
        if (!(rn > 0.0))
            throw DegenerateGeometry("target coincides with antenna " + std::to_string(n));
        const double gain = options.include_amplitude ? r / rn : 1.0;
        a[static_cast<Eigen::Index>(n)] = std::polar(gain, -k * (rn - r));
    }
    return a;
}

CVector far_field_steering(const ArrayGeometry &geometry, const Waveform &waveform, double theta)
{
    const double k = waveform.wavenumber();
    const Point2 u = direction_vector(theta);
    CVector b(static_cast<Eigen::Index>(geometry.size()));
    for (std::size_t n = 0; n < geometry.size(); ++n)
        b[static_cast<Eigen::Index>(n)] = std::polar(1.0, k * geometry.position(n).dot(u));
    return b;
}

RVector antenna_velocities(const ArrayGeometry &geometry, const MotionState &motion)
{
    const double theta = motion.target.theta;
    const double r = motion.target.range;
    const Point2 u = direction_vector(theta);
    const Point2 u_perp = transverse_vector(theta);
    RVector v(static_cast<Eigen::Index>(geometry.size()));
    for (std::size_t n = 0; n < geometry.size(); ++n)
    {
        const Point2 &s = geometry.position(n);
        const double rn = exact_distance(s, theta, r);
        if (!(rn > 0.0))
            throw DegenerateGeometry("target coincides with antenna " + std::to_string(n));
        v[static_cast<Eigen::Index>(n)] =
            ((r - s.dot(u)) * motion.radial_velocity - s.dot(u_perp) * motion.transverse_velocity) / rn;
    }
    return v;
}

CVector doppler_vector(const ArrayGeometry &geometry, const Waveform &waveform, const MotionState &motion, double t)
{
    const RVector v = antenna_velocities(geometry, motion);
    const double k = waveform.wavenumber();
    CVector d(v.size());
    for (Eigen::Index n = 0; n < v.size(); ++n)
        d[n] = std::polar(1.0, -k * v[n] * t);
    return d;
}

CVector moving_response(const ArrayGeometry &geometry, const Waveform &waveform, const MotionState &motion, double t,
                        const SteeringOptions &options)
{
    return near_field_steering(geometry, waveform, motion.target.theta, motion.target.range, options)
        .cwiseProduct(doppler_vector(geometry, waveform, motion, t));
}

// ---- synthesis ---------------------------------------------------------

NoiseModel NoiseModel::from_snr_db(double snr_db, double signal_power)
{
    if (!std::isfinite(snr_db))
        throw std::invalid_argument("SNR must be finite");
    if (!(signal_power > 0.0))
        throw std::invalid_argument("signal power must be positive");
    return {signal_power / std::pow(10.0, snr_db / 10.0)};
}

namespace
{
void check_target_set(std::size_t antennas, std::span<const MotionState> targets)
{
    if (targets.size() >= antennas)
        throw IdentifiabilityError("need fewer targets than antennas (K=" + std::to_string(targets.size()) +
                                   ", N=" + std::to_string(antennas) + ")");
    for (std::size_t k = 0; k < targets.size(); ++k)
    {
        validate_target(targets[k].target);
        for (std::size_t m = 0; m < k; ++m)
            if (targets[k].target.theta == targets[m].target.theta &&
                targets[k].target.range == targets[m].target.range)
                throw std::invalid_argument("targets must be pairwise distinct");
    }
}

// Constant equivalent-source phase exp(-j 2pi f_c (r/c - tau_o)), reduced
// before scaling to keep precision at large r / lambda.
cplx source_phase(const TargetState &target, const Waveform &waveform)
{
    const double cycles_range = target.range / waveform.wavelength();
    const double cycles_clock = waveform.carrier_hz() * target.clock_offset;
    const double fraction = (cycles_range - std::floor(cycles_range)) - (cycles_clock - std::floor(cycles_clock));
    return std::polar(1.0, -kTwoPi * fraction);
}

SnapshotMatrix synthesize(const ArraySetup &setup, std::span<const MotionState> targets, SourceModel source,
                          std::size_t samples, double sample_interval, const NoiseModel &noise, std::uint64_t seed)
{
    if (samples == 0)
        throw std::invalid_argument("need at least one sample");
    if (noise.variance < 0.0 || !std::isfinite(noise.variance))
        throw std::invalid_argument("noise variance must be non-negative");
    const std::size_t antennas = setup.size();
    check_target_set(antennas, targets);

    const auto N = static_cast<Eigen::Index>(antennas);
    const auto L = static_cast<Eigen::Index>(samples);
    const auto K = static_cast<Eigen::Index>(targets.size());

    SnapshotMatrix out;
    out.data = CMatrix::Zero(N, L);
    out.sources.resize(K, L);
    out.sample_interval = sample_interval;
    out.cpi = sample_interval * static_cast<double>(samples);

    for (Eigen::Index k = 0; k < K; ++k)
    {
        const TargetState &target = targets[static_cast<std::size_t>(k)].target;
        const cplx scale = target.amplitude * source_phase(target, setup.waveform);
        RandomStream stream(seed, source_stream(static_cast<std::size_t>(k)));
        for (Eigen::Index l = 0; l < L; ++l)
            out.sources(k, l) =
                scale * (source == SourceModel::gaussian ? stream.complex_normal(1.0) : stream.unit_phase());
    }

    std::vector<CVector> steering;
    std::vector<RVector> velocities;
    steering.reserve(targets.size());
    velocities.reserve(targets.size());
    for (const auto &motion : targets)
    {
        steering.push_back(setup.steering_vector(motion.target.theta, motion.target.range));
        velocities.push_back(antenna_velocities(setup.geometry, motion));
    }

    const double k_wave = setup.waveform.wavenumber();
    RandomStream noise_stream(seed, kNoiseStream);
    for (Eigen::Index l = 0; l < L; ++l)
    {
        const double t = static_cast<double>(l + 1) * sample_interval;
        for (Eigen::Index k = 0; k < K; ++k)
        {
            const CVector &a = steering[static_cast<std::size_t>(k)];
            const RVector &v = velocities[static_cast<std::size_t>(k)];
            const cplx s = out.sources(k, l);
            for (Eigen::Index n = 0; n < N; ++n)
                out.data(n, l) += a[n] * std::polar(1.0, -k_wave * v[n] * t) * s;
        }
        if (noise.enabled())
            for (Eigen::Index n = 0; n < N; ++n)
                out.data(n, l) += noise_stream.complex_normal(noise.variance);
    }
    return out;
}
} // namespace

SnapshotMatrix synthesize_fixed(const ArraySetup &setup, std::span<const TargetState> targets, SourceModel source,
                                std::size_t samples, const NoiseModel &noise, std::uint64_t seed)
{
    std::vector<MotionState> still;
    still.reserve(targets.size());
    for (const auto &t : targets)
        still.push_back({t, 0.0, 0.0});
    return synthesize(setup, still, source, samples, 0.0, noise, seed);
}

SnapshotMatrix synthesize_moving(const ArraySetup &setup, std::span<const MotionState> targets, SourceModel source,
                                 std::size_t samples, double sample_interval, const NoiseModel &noise,
                                 std::uint64_t seed)
{
    if (!(sample_interval > 0.0))
        throw std::invalid_argument("sample interval must be positive");
    return synthesize(setup, targets, source, samples, sample_interval, noise, seed);
}

} // namespace nearfield
