#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "nearfield/array_model.hpp"

namespace nearfield
{

// ---- closed-form bounds ----------------------------------------------------
//
// ULA, Fresnel distance model, unit amplitude, unknown deterministic source,
// phase reference at the first antenna. `snr` is linear.

struct CrbInputs
{
    std::size_t antennas = 0;
    double spacing = 0.0;
    double wavelength = 0.0;
    std::size_t samples = 1;
    double snr = 1.0;
};

// SNR d^2 / lambda^2
double crb_gamma_bar(const CrbInputs &in);
double crb_theta(const CrbInputs &in, double theta);
double crb_r(const CrbInputs &in, double theta, double r);

struct CrbResult
{
    CrbInputs inputs;
    double theta = 0.0;
    double range = 0.0;
    double crb_theta = 0.0;
    double crb_r = 0.0;
    double gamma_bar = 0.0;
    double n1 = 0.0; // (8N-11)(2N-1)
    double n2 = 0.0; // N(N^2-1)(N^2-4)
};

CrbResult crb(const CrbInputs &in, double theta, double r);

// ---- numerical Fisher information -----------------------------------------

// Noise-free mean of one sample at time t as a function of the parameters.
struct ResponseModel
{
    std::vector<std::string> names;
    std::function<CVector(const RVector &, double)> mean;
    std::vector<double> times{0.0};
    double repeats = 1.0;           // identical copies of each time sample
    std::vector<double> scales;     // typical magnitude per parameter, sets the difference step
};

enum class SourceKnowledge
{
    known,   // unit source, known
    nuisance // unknown complex source per sample, projected out
};

struct FimResult
{
    RMatrix fim;
    RVector eigenvalues;        // ascending, of the raw matrix
    RVector scaled_eigenvalues; // ascending, of D^-1/2 F D^-1/2 with D = diag(F)
    double eigen_ratio = 0.0;   // min / max, raw
    double scaled_ratio = 0.0;  // min / max, scaled; 0 when some diagonal entry vanishes
    RMatrix inverse() const { return fim.inverse(); }
};

// Gaussian FIM 2 SNR sum_t Re(D_t^H P D_t) with D_t the central-difference
// Jacobian of the mean (P = I for a known source, the projector orthogonal to
// the mean for a nuisance source). Throws std::invalid_argument when a
// difference step underflows.
FimResult fim_numerical(const ResponseModel &model, const RVector &point, double snr,
                        SourceKnowledge source = SourceKnowledge::nuisance, double relative_step = 1e-6);

// Parameters [theta, r]; `samples` identical snapshots.
ResponseModel fixed_response_model(const ArraySetup &setup, std::size_t samples);
// Parameters [theta, r, v_r, v_theta]; samples at t_l = l T_s.
ResponseModel near_field_moving_model(const ArraySetup &setup, std::size_t samples, double sample_interval);
// Parameters [theta, v_r, v_theta]; plane-wave steering with a common Doppler shift.
ResponseModel far_field_moving_model(const ArraySetup &setup, std::size_t samples, double sample_interval);

// ---- ambiguity and resolution ----------------------------------------------

cplx ambiguity(double theta, double r, double theta0, double r0, const ArraySetup &setup);

// Dirichlet kernel in cos(theta); the removable singularities evaluate to their limits.
cplx lambda1(double vartheta, double vartheta0, std::size_t antennas, double spacing, double wavelength);

struct FresnelPair
{
    double c = 0.0;
    double s = 0.0;
};

// C(x) and S(x); odd in x.
FresnelPair fresnel_integrals(double x);

double fresnel_argument(double r, double theta0, double r0, std::size_t antennas, double spacing,
                        double wavelength);

// N (C(eta) + j S(eta)) / eta
cplx lambda2(double r, double theta0, double r0, std::size_t antennas, double spacing, double wavelength);

// 1.4 lambda / (pi N d), half-width in cos(theta).
double hpmw_direction(std::size_t antennas, double spacing, double wavelength);
// N^2 d^2 sin^2(theta0) / (5 lambda)
double threshold_distance(std::size_t antennas, double spacing, double wavelength, double theta0);

struct DistanceInterval
{
    double lower = 0.0; // offset from r0, negative
    double upper = 0.0; // offset from r0, +inf when r0 >= d_T
    bool upper_infinite() const { return upper == std::numeric_limits<double>::infinity(); }
};

DistanceInterval hpmw_distance(double r0, double d_t);

// Half-power half-width of |Lambda1|^2 in cos(theta), found by root bracketing.
double half_power_direction_numeric(std::size_t antennas, double spacing, double wavelength);
// eta at which |Lambda2|^2 = N^2 / 2.
double half_power_eta();
// Half-power range offsets of |Lambda2|^2 around r0.
DistanceInterval half_power_distance_numeric(double r0, double theta0, std::size_t antennas, double spacing,
                                             double wavelength);

struct ResolutionReport
{
    double direction_halfwidth = 0.0;
    DistanceInterval distance;
    double threshold = 0.0; // d_T
    double fraunhofer = 0.0;
};

ResolutionReport resolution(double theta0, double r0, std::size_t antennas, double spacing, double wavelength);

} // namespace nearfield
