#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nearfield/array_model.hpp"

namespace nearfield
{

// ---- covariance and subspaces ------------------------------------------

struct CovarianceEstimate
{
    CMatrix matrix; // Hermitian N x N
    std::size_t samples = 0;
};

// R = Y Y^H / L, symmetrized.
CovarianceEstimate sample_covariance(const CMatrix &snapshots);

struct SubspaceDecomposition
{
    RVector eigenvalues;  // descending
    CMatrix signal_basis; // N x K
    CMatrix noise_basis;  // N x (N - K)
    std::size_t num_signals = 0;

    RVector signal_eigenvalues() const { return eigenvalues.head(static_cast<Eigen::Index>(num_signals)); }
    RVector noise_eigenvalues() const
    {
        return eigenvalues.tail(eigenvalues.size() - static_cast<Eigen::Index>(num_signals));
    }
};

// Hermitian eigendecomposition split into K signal and N-K noise directions.
// Throws std::invalid_argument if K >= N or the input is not Hermitian.
SubspaceDecomposition eig_decompose(const CMatrix &covariance, std::size_t num_signals);

// Number of eigenvalues above ratio * median. Input sorted descending.
std::size_t estimate_num_targets(const RVector &eigenvalues, double ratio = 10.0);

// ---- search grids ------------------------------------------------------

enum class AxisSpacing
{
    linear,  // uniform in the parameter itself
    cosine,  // uniform in cos(theta)
    inverse  // uniform in 1/r
};

// One search dimension. `coordinate` maps a parameter to the variable the
// axis is uniform in; peak exclusion always works in cos(theta) and 1/r.
struct GridAxis
{
    std::vector<double> values;
    AxisSpacing spacing = AxisSpacing::linear;

    static GridAxis linear(double lower, double upper, std::size_t points);
    // Directions uniform in cos(theta) over [lower, upper] (radians), ascending.
    static GridAxis cosine(double lower, double upper, std::size_t points);
    // Ranges uniform in 1/r over [lower, upper] (meters), ascending.
    static GridAxis inverse(double lower, double upper, std::size_t points);
    static GridAxis single(double value);

    std::size_t size() const { return values.size(); }
    double coordinate(double value) const;
    // Spacing between neighbouring nodes in the uniform coordinate.
    double step() const;
};

struct SearchGrid
{
    GridAxis theta;
    GridAxis range;

    std::size_t size() const { return theta.size() * range.size(); }
};

// Objective sampled over a (theta, r) grid. values(i, j) belongs to
// theta.values[i], range.values[j].
struct SpectrumGrid
{
    GridAxis theta;
    GridAxis range;
    RMatrix values;
    std::string kind;               // "dml", "music-signal", "music-noise", "direction", "distance"
    bool include_amplitude = false; // steering convention used
    std::vector<std::pair<std::size_t, std::size_t>> flagged; // clamped cells
    std::optional<double> ceiling;                            // clamp value when any cell was flagged
};

// tr(P_a X X^H) = |a^H X|^2 / |a|^2 per grid cell. With X = Y this is the
// single-target DML objective, with X = U_s the signal-subspace MUSIC one.
SpectrumGrid spectrum_single(const CMatrix &data, const ArraySetup &setup, const SearchGrid &grid);

struct MusicClamp
{
    double denominator_floor = 1e-15;
    double ceiling_over_median = 1e6;
};

// 1 / (a^H U_n U_n^H a), or |a|^2 / (a^H U_n U_n^H a) when the setup uses the
// exact amplitude. Cells whose denominator falls below the floor are set to
// ceiling_over_median * median(unflagged values) and recorded in `flagged`.
SpectrumGrid music_spectrum_noise(const CMatrix &noise_basis, const ArraySetup &setup, const SearchGrid &grid,
                                  const MusicClamp &clamp = {});

// Multi-target subspace fit tr(P_A X X^H) over all K-tuples of candidate
// locations (K = 1 or 2).
struct Location
{
    double theta = 0.0;
    double range = 0.0;
};

struct MultiFit
{
    std::size_t num_targets = 0;
    std::vector<Location> candidates;
    // Row-major over K-tuples: index i for K=1, i*M + j for K=2. Unordered
    // pairs are stored for i < j only; other entries are -inf.
    std::vector<double> values;
    std::vector<bool> rank_deficient;
    std::vector<std::size_t> best; // candidate indices of the maximum
    double best_value = 0.0;
};

MultiFit fit_subspace_multi(const CMatrix &data, std::size_t num_targets, const ArraySetup &setup,
                            std::span<const Location> candidates, double rank_tolerance = 1e-10);

// ---- peaks -------------------------------------------------------------

struct Peak
{
    std::size_t theta_index = 0;
    std::size_t range_index = 0;
    double theta = 0.0;
    double range = 0.0;
    double value = 0.0;
};

struct PeakSet
{
    std::vector<Peak> peaks; // descending value
};

// Two peaks conflict when |d cos(theta)| < cos_halfwidth and
// |d (1/r)| < inverse_range_coefficient / sin^2(theta_first).
struct PeakExclusion
{
    double cos_halfwidth = 0.0;
    double inverse_range_coefficient = 0.0;

    // One direction half-power width times one distance half-power width of
    // an N-element array with spacing d. The distance width in 1/r is 1/d_T.
    static PeakExclusion from_resolution(std::size_t antennas, double spacing, double wavelength);
};

class InsufficientPeaks : public std::runtime_error
{
public:
    InsufficientPeaks(PeakSet found, std::size_t requested);
    const PeakSet &found() const { return found_; }
    std::size_t requested() const { return requested_; }

private:
    PeakSet found_;
    std::size_t requested_;
};

// K strict local maxima (8-neighbourhood), taken greedily by value; ties go to
// the smaller theta index, then the smaller range index.
PeakSet find_peaks(const SpectrumGrid &spectrum, std::size_t num_peaks, const PeakExclusion &exclusion);

// Newton refinement of a spectrum maximum in the (cos theta, 1/r) plane.
// `objective` is maximized; the result stays within `max_cells` grid steps of
// start. Coupled parameters (off-centre references) tilt the peak ridge, so
// the grid maximum can sit a few cells from the continuous one.
Location refine_peak(const std::function<double(double, double)> &objective, const Location &start,
                     const SearchGrid &grid, int iterations = 20, double max_cells = 4.0);

} // namespace nearfield
