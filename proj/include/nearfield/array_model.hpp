#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nearfield/common.hpp"

namespace nearfield
{

// ---- geometry ----------------------------------------------------------

enum class UlaReference
{
    center, // antennas symmetric about the origin
    first   // first antenna at the origin, the rest along +x
};

// Antenna coordinates in the array plane (meters).
class ArrayGeometry
{
public:
    explicit ArrayGeometry(std::vector<Point2> positions);

    // Uniform linear array on the x-axis.
    static ArrayGeometry ula(std::size_t count, double spacing, UlaReference reference = UlaReference::center);

    std::size_t size() const { return positions_.size(); }
    const std::vector<Point2> &positions() const { return positions_; }
    const Point2 &position(std::size_t n) const { return positions_[n]; }

    // Largest pairwise antenna distance.
    double aperture() const { return aperture_; }

private:
    std::vector<Point2> positions_;
    double aperture_;
};

// Symmetric ULA with N = 2M+1 antennas, centre antenna at the origin,
// antenna n at (delta_n * d, 0) with delta_n = n - M (0-based n).
class SymmetricUla
{
public:
    SymmetricUla(std::size_t half_size, double spacing);

    std::size_t half_size() const { return half_size_; }
    std::size_t size() const { return 2 * half_size_ + 1; }
    double spacing() const { return spacing_; }
    int offset(std::size_t n) const { return static_cast<int>(n) - static_cast<int>(half_size_); }
    const ArrayGeometry &geometry() const { return geometry_; }

private:
    std::size_t half_size_;
    double spacing_;
    ArrayGeometry geometry_;
};

// u(theta) = [cos, sin]
inline Point2 direction_vector(double theta) { return {std::cos(theta), std::sin(theta)}; }
// u_perp(theta) = [-sin, cos]
inline Point2 transverse_vector(double theta) { return {-std::sin(theta), std::cos(theta)}; }

// ---- targets -----------------------------------------------------------

struct TargetState
{
    double theta = kPi / 2; // rad, in (0, pi)
    double range = 1.0;     // m, > 0
    // Equivalent-source amplitude. With a reference gain beta at 1 m this is
    // beta / range; see amplitude_from_reference_gain.
    cplx amplitude{1.0, 0.0};
    double clock_offset = 0.0; // s, folded into the source phase

    Point2 location() const { return range * direction_vector(theta); }
};

inline cplx amplitude_from_reference_gain(cplx beta, double range) { return beta / range; }

struct MotionState
{
    TargetState target;
    double radial_velocity = 0.0;     // m/s along u(theta)
    double transverse_velocity = 0.0; // m/s along u_perp(theta)

    Point2 velocity() const
    {
        return radial_velocity * direction_vector(target.theta) + transverse_velocity * transverse_vector(target.theta);
    }
    double speed() const { return std::hypot(radial_velocity, transverse_velocity); }
};

// Throws std::invalid_argument unless theta is in (0, pi) and range > 0.
void validate_target(const TargetState &target);

// ---- propagation distances ---------------------------------------------

double fraunhofer_distance(double aperture, double wavelength);
// Start of the range where the second-order (Fresnel) expansion is tight.
double fresnel_region_start(double aperture, double wavelength);

// Radiating-field electric field at distance r (reactive terms dropped).
cplx radiating_field_gain(double r, double wavelength, double impedance);

double exact_distance(const Point2 &antenna, const Point2 &target);
// Same quantity through sqrt(r^2 - 2 r s.u + |s|^2).
double exact_distance(const Point2 &antenna, double theta, double r);
// Plane-wave distance r - s.u(theta).
double farfield_distance(const Point2 &antenna, double theta, double r);
// Second-order expansion for an antenna at signed offset along the x-axis:
// r - offset cos(theta) + offset^2 sin^2(theta) / (2r).
double fresnel_distance(double offset, double theta, double r);
// Second-order expansion for an arbitrary antenna position.
double fresnel_distance(const Point2 &antenna, double theta, double r);

// ---- response vectors --------------------------------------------------

enum class DistanceModel
{
    exact,
    fresnel,
    planar
};

struct SteeringOptions
{
    bool include_amplitude = false; // r / r_n factor
    DistanceModel distance = DistanceModel::exact;
};

// a_n = (r / r_n) exp(-j 2pi (r_n - r) / lambda); amplitude factor 1 unless
// include_amplitude. Throws DegenerateGeometry when some r_n = 0.
CVector near_field_steering(const ArrayGeometry &geometry, const Waveform &waveform, double theta, double r,
                            const SteeringOptions &options = {});

// b_n = exp(j 2pi s_n.u(theta) / lambda)
CVector far_field_steering(const ArrayGeometry &geometry, const Waveform &waveform, double theta);

// Per-antenna Doppler velocity v_n: projections of v_r and v_theta on the
// line of sight of antenna n.
RVector antenna_velocities(const ArrayGeometry &geometry, const MotionState &motion);

// d_n = exp(-j 2pi v_n t / lambda)
CVector doppler_vector(const ArrayGeometry &geometry, const Waveform &waveform, const MotionState &motion, double t);

// a(theta, r) .* d(v_theta, v_r, t)
CVector moving_response(const ArrayGeometry &geometry, const Waveform &waveform, const MotionState &motion, double t,
                        const SteeringOptions &options = {});

// Geometry + carrier + steering convention shared by one experiment.
struct ArraySetup
{
    ArrayGeometry geometry;
    Waveform waveform;
    SteeringOptions steering{};

    std::size_t size() const { return geometry.size(); }
    double wavelength() const { return waveform.wavelength(); }
    CVector steering_vector(double theta, double r) const
    {
        return near_field_steering(geometry, waveform, theta, r, steering);
    }
};

// ---- snapshot synthesis ------------------------------------------------

// SNR is the per-antenna received power of a unit-amplitude target divided by
// the noise variance.
struct NoiseModel
{
    double variance = 0.0;

    static NoiseModel from_snr_db(double snr_db, double signal_power = 1.0);
    bool enabled() const { return variance > 0.0; }
};

enum class SourceModel
{
    gaussian,    // amplitude * CN(0, 1)
    unit_modulus // amplitude * exp(j phi), phi ~ U[0, 2pi)
};

struct SnapshotMatrix
{
    CMatrix data;    // N x L
    CMatrix sources; // K x L equivalent source samples used for `data`
    double sample_interval = 0.0;
    double cpi = 0.0;

    std::size_t antennas() const { return static_cast<std::size_t>(data.rows()); }
    std::size_t samples() const { return static_cast<std::size_t>(data.cols()); }
};

// Y = A S + W. Deterministic in seed; noise uses stream 0, target k uses
// stream k+1. Throws IdentifiabilityError when K >= N.
SnapshotMatrix synthesize_fixed(const ArraySetup &setup, std::span<const TargetState> targets, SourceModel source,
                                std::size_t samples, const NoiseModel &noise, std::uint64_t seed);

// Sample l (1-based) at t_l = l * sample_interval: (A .* D(t_l)) s(l) + w(l).
// With all velocities zero this reproduces synthesize_fixed bit for bit.
SnapshotMatrix synthesize_moving(const ArraySetup &setup, std::span<const MotionState> targets, SourceModel source,
                                 std::size_t samples, double sample_interval, const NoiseModel &noise,
                                 std::uint64_t seed);

} // namespace nearfield
