#pragma once

#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace nearfield
{

using cplx = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;
using RVector = Eigen::VectorXd;
using RMatrix = Eigen::MatrixXd;
using Point2 = Eigen::Vector2d;

inline constexpr double kSpeedOfLight = 299792458.0; // m/s
inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Narrowband carrier. The wavelength is always derived from the carrier.
class Waveform
{
public:
    explicit Waveform(double carrier_hz);

    double carrier_hz() const { return carrier_hz_; }
    double wavelength() const { return kSpeedOfLight / carrier_hz_; }
    double wavenumber() const { return kTwoPi / wavelength(); }

private:
    double carrier_hz_;
};

// ---- error types -------------------------------------------------------
//
// Plain invalid input uses std::invalid_argument. The types below carry the
// failure kinds that callers are expected to distinguish.

// A target coincides with an antenna (zero propagation distance).
class DegenerateGeometry : public std::domain_error
{
public:
    using std::domain_error::domain_error;
};

// Too many targets for the array (K >= N).
class IdentifiabilityError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

// An estimator precondition does not hold. `condition` names it.
class ValidityError : public std::invalid_argument
{
public:
    ValidityError(std::string condition, const std::string &message)
        : std::invalid_argument(message), condition_(std::move(condition)) {}
    const std::string &condition() const { return condition_; }

private:
    std::string condition_;
};

// sin(theta) = 0 makes the closed-form bounds singular.
class SingularGeometry : public std::domain_error
{
public:
    using std::domain_error::domain_error;
};

// A 1-D spectrum has no strict maximum.
class NoPeak : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

// State propagation moved the target through the array origin.
class TargetPassedOrigin : public std::domain_error
{
public:
    using std::domain_error::domain_error;
};

// A quantity needed by an estimator is zero or otherwise unusable.
class InvalidState : public std::domain_error
{
public:
    using std::domain_error::domain_error;
};

// Stable machine-readable name for an exception, used by the CLI error JSON.
std::string error_kind(const std::exception &error);

} // namespace nearfield
