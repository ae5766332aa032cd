#include "nearfield/symmetric_ula.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

namespace nearfield
{

double theta_to_gamma(double theta, double spacing, double wavelength)
{
    return -kTwoPi * spacing * std::cos(theta) / wavelength;
}

double gamma_to_theta(double gamma, double spacing, double wavelength)
{
    const double c = -gamma * wavelength / (kTwoPi * spacing);
    if (!(std::abs(c) <= 1.0))
        throw std::invalid_argument("electric angle outside the visible region");
    return std::acos(c);
}

CVector anti_diagonal_vector(const CMatrix &covariance, double noise_floor)
{
    const auto n = covariance.rows();
    if (covariance.cols() != n || n == 0)
        throw std::invalid_argument("anti_diagonal_vector: covariance must be square");
    if (n % 2 == 0)
        throw std::invalid_argument("anti_diagonal_vector: symmetric ULA needs an odd antenna count");
    CVector y(n);
    for (Eigen::Index p = 0; p < n; ++p)
        y[p] = covariance(p, n - 1 - p);
    y[n / 2] -= noise_floor;
    return y;
}

double noise_floor_estimate(const CMatrix &covariance)
{
    Eigen::SelfAdjointEigenSolver<CMatrix> solver(covariance, Eigen::EigenvaluesOnly);
    return solver.eigenvalues()[0];
}

SubvectorCovariance subvector_covariance(const CVector &anti_diagonal, std::size_t windows)
{
    const auto n = static_cast<std::size_t>(anti_diagonal.size());
    if (windows < 1 || windows > n)
        throw std::invalid_argument("subvector count J must lie in [1, N]");
    const std::size_t ns = n + 1 - windows;
    if (ns < 2)
        throw std::invalid_argument("subvectors need at least two entries");
    const auto size = static_cast<Eigen::Index>(ns);
    CMatrix stacked(size, static_cast<Eigen::Index>(windows));
    for (std::size_t i = 0; i < windows; ++i)
        stacked.col(static_cast<Eigen::Index>(i)) = anti_diagonal.segment(static_cast<Eigen::Index>(i), size);
    CMatrix r = stacked * stacked.adjoint() / static_cast<double>(windows);
    return {0.5 * (r + r.adjoint()), windows, ns};
}

std::size_t numerical_rank(const RVector &eigenvalues, double relative_tolerance)
{
    if (eigenvalues.size() == 0)
        return 0;
    const double top = eigenvalues.maxCoeff();
    if (!(top > 0.0))
        return 0;
    return static_cast<std::size_t>((eigenvalues.array() > relative_tolerance * top).count());
}

CVector window_steering(std::size_t window_size, std::size_t half_size, double gamma)
{
    CVector a(static_cast<Eigen::Index>(window_size));
    for (std::size_t m = 0; m < window_size; ++m)
    {
        const double offset = static_cast<double>(m) - static_cast<double>(half_size);
        a[static_cast<Eigen::Index>(m)] = std::polar(1.0, -2.0 * offset * gamma);
    }
    return a;
}

DirectionSearch direction_music(const SubvectorCovariance &covariance, std::size_t num_targets,
                                std::size_t half_size, double spacing, double wavelength, const GridAxis &theta)
{
    const std::size_t ns = covariance.window_size;
    if (num_targets < 1 || ns <= num_targets)
        throw std::invalid_argument("direction_music: need Ns > K >= 1");
    const auto decomposition = eig_decompose(covariance.matrix, num_targets);
    const CMatrix un_adj = decomposition.noise_basis.adjoint();

    DirectionSearch out;
    out.spectrum.theta = theta;
    out.spectrum.range = GridAxis::single(std::numeric_limits<double>::infinity());
    out.spectrum.values.resize(static_cast<Eigen::Index>(theta.size()), 1);
    out.spectrum.kind = "direction";
    out.thetas = theta.values;
    out.gammas.reserve(theta.size());

    std::vector<double> unflagged;
    const MusicClamp clamp{};
    for (std::size_t i = 0; i < theta.size(); ++i)
    {
        const double gamma = theta_to_gamma(theta.values[i], spacing, wavelength);
        out.gammas.push_back(gamma);
        const CVector a = window_steering(ns, half_size, gamma);
        const double den = (un_adj * a).squaredNorm();
        out.multiply_adds += static_cast<std::uint64_t>(un_adj.rows()) * static_cast<std::uint64_t>(ns);
        if (den < clamp.denominator_floor)
        {
            out.spectrum.flagged.emplace_back(i, 0);
            continue;
        }
        out.spectrum.values(static_cast<Eigen::Index>(i), 0) = 1.0 / den;
        unflagged.push_back(1.0 / den);
    }
    if (!out.spectrum.flagged.empty())
    {
        std::sort(unflagged.begin(), unflagged.end());
        const double ceiling = unflagged.empty() ? 1.0 / clamp.denominator_floor
                                                 : clamp.ceiling_over_median * unflagged[unflagged.size() / 2];
        out.spectrum.ceiling = ceiling;
        for (const auto &[i, j] : out.spectrum.flagged)
            out.spectrum.values(static_cast<Eigen::Index>(i), 0) = ceiling;
    }
    return out;
}

DistanceSearch distance_music_per_direction(const CMatrix &noise_basis, const ArraySetup &setup, double theta_hat,
                                            const GridAxis &range)
{
    if (!(theta_hat > 0.0 && theta_hat < kPi))
        throw std::invalid_argument("distance search direction must lie in (0, pi)");
    SearchGrid grid{GridAxis::single(theta_hat), range};
    DistanceSearch out;
    out.spectrum = music_spectrum_noise(noise_basis, setup, grid);
    out.spectrum.kind = "distance";

    const RVector row = out.spectrum.values.row(0).transpose();
    Eigen::Index best = 0;
    row.maxCoeff(&best);
    const double top = row[best];
    const bool flat = row.minCoeff() == top;
    const bool tied = (best > 0 && row[best - 1] == top) || (best + 1 < row.size() && row[best + 1] == top);
    if (flat || tied)
        throw NoPeak("distance spectrum has no strict maximum");
    out.range_index = static_cast<std::size_t>(best);
    out.range = range.values[out.range_index];
    return out;
}

namespace
{
bool is_symmetric_ula(const ArrayGeometry &geometry, double &spacing)
{
    const std::size_t n = geometry.size();
    if (n < 3 || n % 2 == 0)
        return false;
    const std::size_t m = n / 2;
    spacing = geometry.position(m + 1).x() - geometry.position(m).x();
    if (!(spacing > 0.0))
        return false;
    const double tol = 1e-9 * spacing;
    for (std::size_t k = 0; k < n; ++k)
    {
        const double expected = (static_cast<double>(k) - static_cast<double>(m)) * spacing;
        const auto &p = geometry.position(k);
        if (std::abs(p.x() - expected) > tol || std::abs(p.y()) > tol)
            return false;
    }
    return true;
}
} // namespace

void check_modified_music(const ArraySetup &setup, const ModifiedMusicConfig &config)
{
    double spacing = 0.0;
    if (!is_symmetric_ula(setup.geometry, spacing))
        throw ValidityError("symmetry", "modified MUSIC needs a symmetric ULA with an odd antenna count centred at "
                                        "the origin");
    const double lambda = setup.wavelength();
    if (spacing > 0.25 * lambda * (1.0 + 1e-12))
        throw ValidityError("spacing", "modified MUSIC needs spacing d <= lambda/4");
    if (config.range.size() == 0 || config.theta.size() == 0)
        throw std::invalid_argument("modified MUSIC grids are empty");
    const double fresnel = fresnel_region_start(setup.geometry.aperture(), lambda);
    const double lowest = *std::min_element(config.range.values.begin(), config.range.values.end());
    if (lowest < fresnel * (1.0 - 1e-12))
        throw ValidityError("fresnel-radius", "distance grid starts below 0.5 sqrt(D^3/lambda) = " +
                                                  std::to_string(fresnel) + " m");
    const std::size_t n = setup.size();
    const std::size_t j = config.windows == 0 ? n / 5 : config.windows;
    if (j < 1 || j > n - 1)
        throw std::invalid_argument("subvector count J must lie in [1, N-1]");
}

ModifiedMusicResult modified_music(const CMatrix &snapshots, std::size_t num_targets, const ArraySetup &setup,
                                   const ModifiedMusicConfig &config)
{
    check_modified_music(setup, config);
    const std::size_t n = setup.size();
    const std::size_t m = n / 2;
    const double spacing = setup.geometry.position(m + 1).x() - setup.geometry.position(m).x();
    const std::size_t j = config.windows == 0 ? n / 5 : config.windows;
    if (num_targets < 1 || n + 1 - j <= num_targets)
        throw IdentifiabilityError("modified MUSIC needs Ns = N + 1 - J > K");

    const auto covariance = sample_covariance(snapshots);
    const auto full = eig_decompose(covariance.matrix, num_targets);

    ModifiedMusicResult out;
    out.windows = j;
    out.window_size = n + 1 - j;
    out.noise_floor = full.eigenvalues[full.eigenvalues.size() - 1];

    const CVector ybar = anti_diagonal_vector(covariance.matrix, out.noise_floor);
    const auto sub = subvector_covariance(ybar, j);
    out.direction = direction_music(sub, num_targets, m, spacing, setup.wavelength(), config.theta);

    // The doubled electric angle narrows the mainlobe by a factor of two.
    const double lambda = setup.wavelength();
    const PeakExclusion exclusion{1.4 * lambda / (kTwoPi * spacing * static_cast<double>(out.window_size)),
                                  std::numeric_limits<double>::infinity()};
    const PeakSet directions = find_peaks(out.direction.spectrum, num_targets, exclusion);

    for (const auto &p : directions.peaks)
    {
        auto search = distance_music_per_direction(full.noise_basis, setup, p.theta, config.range);
        Peak est = p;
        est.range = search.range;
        est.range_index = search.range_index;
        est.value = search.spectrum.values(0, static_cast<Eigen::Index>(search.range_index));
        out.estimates.peaks.push_back(est);
        out.distances.push_back(std::move(search));
    }
    return out;
}

} // namespace nearfield
