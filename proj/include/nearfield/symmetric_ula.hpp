#pragma once

#include <optional>
#include <vector>

#include "nearfield/subspace.hpp"

namespace nearfield
{

// Electric angle gamma = -2 pi d cos(theta) / lambda.
double theta_to_gamma(double theta, double spacing, double wavelength);
// Inverse of theta_to_gamma; throws std::invalid_argument when |gamma| > 2 pi d / lambda.
double gamma_to_theta(double gamma, double spacing, double wavelength);

// Entry p (0-based, offset p - M) is R(p, N-1-p); the centre entry has
// noise_floor subtracted. Throws std::invalid_argument for even N.
CVector anti_diagonal_vector(const CMatrix &covariance, double noise_floor = 0.0);

// Smallest eigenvalue of a Hermitian matrix.
double noise_floor_estimate(const CMatrix &covariance);

struct SubvectorCovariance
{
    CMatrix matrix;             // Ns x Ns
    std::size_t windows = 0;    // J
    std::size_t window_size = 0; // Ns = N + 1 - J
};

// sum_i y(i) y(i)^H / J over the J length-Ns windows y(i) = ybar[i .. i+Ns-1].
SubvectorCovariance subvector_covariance(const CVector &anti_diagonal, std::size_t windows);

// Count of eigenvalues above relative_tolerance * largest.
std::size_t numerical_rank(const RVector &eigenvalues, double relative_tolerance);

// Windowed steering vector: element m is exp(-j 2 (m - M) gamma).
CVector window_steering(std::size_t window_size, std::size_t half_size, double gamma);

struct DirectionSearch
{
    SpectrumGrid spectrum; // range axis collapsed to one node
    std::vector<double> thetas;
    std::vector<double> gammas;
    std::uint64_t multiply_adds = 0; // complex multiply-adds spent in the grid search
};

// Noise-subspace MUSIC over the windowed model. `theta` is the direction grid.
DirectionSearch direction_music(const SubvectorCovariance &covariance, std::size_t num_targets,
                                std::size_t half_size, double spacing, double wavelength, const GridAxis &theta);

struct DistanceSearch
{
    SpectrumGrid spectrum; // theta axis collapsed to theta_hat
    double range = 0.0;
    std::size_t range_index = 0;
};

// 1-D noise-subspace MUSIC over range at a fixed direction. Throws NoPeak on a
// flat spectrum.
DistanceSearch distance_music_per_direction(const CMatrix &noise_basis, const ArraySetup &setup, double theta_hat,
                                            const GridAxis &range);

struct ModifiedMusicConfig
{
    std::size_t windows = 0; // J; 0 selects floor(N / 5)
    GridAxis theta;
    GridAxis range;
};

struct ModifiedMusicResult
{
    PeakSet estimates;
    DirectionSearch direction;
    std::vector<DistanceSearch> distances;
    std::size_t windows = 0;
    std::size_t window_size = 0;
    double noise_floor = 0.0;
};

// Preconditions are checked before any computation and reported as
// ValidityError with condition "symmetry", "spacing" or "fresnel-radius".
void check_modified_music(const ArraySetup &setup, const ModifiedMusicConfig &config);

ModifiedMusicResult modified_music(const CMatrix &snapshots, std::size_t num_targets, const ArraySetup &setup,
                                   const ModifiedMusicConfig &config);

} // namespace nearfield
