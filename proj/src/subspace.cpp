#include "nearfield/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>

namespace nearfield
{

CovarianceEstimate sample_covariance(const CMatrix &snapshots)
{
    if (snapshots.rows() == 0 || snapshots.cols() == 0)
        throw std::invalid_argument("sample_covariance: empty snapshot matrix");
    const auto samples = static_cast<double>(snapshots.cols());
    CMatrix r = snapshots * snapshots.adjoint() / samples;
    CMatrix sym = 0.5 * (r + r.adjoint());
    return {std::move(sym), static_cast<std::size_t>(snapshots.cols())};
}

SubspaceDecomposition eig_decompose(const CMatrix &covariance, std::size_t num_signals)
{
    const auto n = static_cast<std::size_t>(covariance.rows());
    if (covariance.cols() != covariance.rows() || n == 0)
        throw std::invalid_argument("eig_decompose: covariance must be square and non-empty");
    if (num_signals >= n)
        throw IdentifiabilityError("eig_decompose: K must be smaller than N");
    const double scale = std::max(covariance.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    if ((covariance - covariance.adjoint()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw std::invalid_argument("eig_decompose: covariance is not Hermitian");

    Eigen::SelfAdjointEigenSolver<CMatrix> solver(covariance);
    if (solver.info() != Eigen::Success)
        throw std::runtime_error("eig_decompose: eigensolver failed");

    // Eigen returns ascending order.
    const auto size = static_cast<Eigen::Index>(n);
    const auto k = static_cast<Eigen::Index>(num_signals);
    SubspaceDecomposition out;
    out.num_signals = num_signals;
    out.eigenvalues = solver.eigenvalues().reverse();
    CMatrix vectors = solver.eigenvectors().rowwise().reverse();
    out.signal_basis = vectors.leftCols(k);
    out.noise_basis = vectors.rightCols(size - k);
    return out;
}

std::size_t estimate_num_targets(const RVector &eigenvalues, double ratio)
{
    if (eigenvalues.size() == 0)
        return 0;
    std::vector<double> sorted(eigenvalues.data(), eigenvalues.data() + eigenvalues.size());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t m = sorted.size();
    const double median = m % 2 == 1 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
    const double threshold = ratio * median;
    return static_cast<std::size_t>(std::count_if(sorted.begin(), sorted.end(), [&](double v) { return v > threshold; }));
}

// ---- grids ---------------------------------------------------------------

namespace
{
std::vector<double> linspace(double lower, double upper, std::size_t points)
{
    if (points == 0)
        throw std::invalid_argument("grid axis needs at least one point");
    std::vector<double> v(points);
    if (points == 1)
    {
        v[0] = 0.5 * (lower + upper);
        return v;
    }
    const double step = (upper - lower) / static_cast<double>(points - 1);
    for (std::size_t i = 0; i < points; ++i)
        v[i] = lower + step * static_cast<double>(i);
    v.back() = upper;
    return v;
}
} // namespace

GridAxis GridAxis::linear(double lower, double upper, std::size_t points)
{
    if (!(upper >= lower))
        throw std::invalid_argument("grid axis bounds are reversed");
    return {linspace(lower, upper, points), AxisSpacing::linear};
}

GridAxis GridAxis::cosine(double lower, double upper, std::size_t points)
{
    if (!(lower > 0.0 && upper < kPi && upper >= lower))
        throw std::invalid_argument("direction grid must lie inside (0, pi)");
    // Ascending theta means descending cos(theta).
    auto c = linspace(std::cos(upper), std::cos(lower), points);
    GridAxis axis{{}, AxisSpacing::cosine};
    axis.values.reserve(points);
    for (auto it = c.rbegin(); it != c.rend(); ++it)
        axis.values.push_back(std::acos(*it));
    if (points > 1)
    {
        axis.values.front() = lower;
        axis.values.back() = upper;
    }
    return axis;
}

GridAxis GridAxis::inverse(double lower, double upper, std::size_t points)
{
    if (!(lower > 0.0 && upper >= lower))
        throw std::invalid_argument("range grid must be positive");
    auto w = linspace(1.0 / upper, 1.0 / lower, points);
    GridAxis axis{{}, AxisSpacing::inverse};
    axis.values.reserve(points);
    for (auto it = w.rbegin(); it != w.rend(); ++it)
        axis.values.push_back(1.0 / *it);
    if (points > 1)
    {
        axis.values.front() = lower;
        axis.values.back() = upper;
    }
    return axis;
}

GridAxis GridAxis::single(double value) { return {{value}, AxisSpacing::linear}; }

double GridAxis::coordinate(double value) const
{
    switch (spacing)
    {
    case AxisSpacing::cosine:
        return std::cos(value);
    case AxisSpacing::inverse:
        return 1.0 / value;
    case AxisSpacing::linear:
        break;
    }
    return value;
}

double GridAxis::step() const
{
    if (values.size() < 2)
        return 0.0;
    return std::abs(coordinate(values.back()) - coordinate(values.front())) / static_cast<double>(values.size() - 1);
}

// ---- spectra ---------------------------------------------------------------

namespace
{
// Steering vectors for one theta row, one column per range node.
CMatrix steering_row(const ArraySetup &setup, double theta, const GridAxis &range)
{
    CMatrix a(static_cast<Eigen::Index>(setup.size()), static_cast<Eigen::Index>(range.size()));
    for (std::size_t j = 0; j < range.size(); ++j)
        a.col(static_cast<Eigen::Index>(j)) = setup.steering_vector(theta, range.values[j]);
    return a;
}

double median_of(std::vector<double> v)
{
    if (v.empty())
        return std::numeric_limits<double>::quiet_NaN();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1)
        return *mid;
    const double upper = *mid;
    const double lower = *std::max_element(v.begin(), mid);
    return 0.5 * (lower + upper);
}
} // namespace

SpectrumGrid spectrum_single(const CMatrix &data, const ArraySetup &setup, const SearchGrid &grid)
{
    if (grid.size() == 0)
        throw std::invalid_argument("spectrum grid is empty");
    if (static_cast<std::size_t>(data.rows()) != setup.size())
        throw std::invalid_argument("data rows do not match the array size");
    SpectrumGrid out{grid.theta, grid.range, RMatrix(grid.theta.size(), grid.range.size()), "dml",
                     setup.steering.include_amplitude, {}, std::nullopt};
    for (std::size_t i = 0; i < grid.theta.size(); ++i)
    {
        const CMatrix a = steering_row(setup, grid.theta.values[i], grid.range);
        const CMatrix proj = a.adjoint() * data; // Nr x cols
        const RVector num = proj.rowwise().squaredNorm();
        const RVector den = a.colwise().squaredNorm().transpose();
        out.values.row(static_cast<Eigen::Index>(i)) = num.cwiseQuotient(den).transpose();
    }
    return out;
}

SpectrumGrid music_spectrum_noise(const CMatrix &noise_basis, const ArraySetup &setup, const SearchGrid &grid,
                                  const MusicClamp &clamp)
{
    if (grid.size() == 0)
        throw std::invalid_argument("spectrum grid is empty");
    if (static_cast<std::size_t>(noise_basis.rows()) != setup.size())
        throw std::invalid_argument("noise basis rows do not match the array size");
    SpectrumGrid out{grid.theta, grid.range, RMatrix(grid.theta.size(), grid.range.size()), "music-noise",
                     setup.steering.include_amplitude, {}, std::nullopt};
    std::vector<double> unflagged;
    unflagged.reserve(grid.size());
    for (std::size_t i = 0; i < grid.theta.size(); ++i)
    {
        const CMatrix a = steering_row(setup, grid.theta.values[i], grid.range);
        const CMatrix proj = noise_basis.adjoint() * a; // (N-K) x Nr
        for (std::size_t j = 0; j < grid.range.size(); ++j)
        {
            const auto col = static_cast<Eigen::Index>(j);
            const double den = proj.col(col).squaredNorm();
            const double num = setup.steering.include_amplitude ? a.col(col).squaredNorm() : 1.0;
            if (den < clamp.denominator_floor)
            {
                out.flagged.emplace_back(i, j);
                out.values(static_cast<Eigen::Index>(i), col) = 0.0;
                continue;
            }
            const double value = num / den;
            out.values(static_cast<Eigen::Index>(i), col) = value;
            unflagged.push_back(value);
        }
    }
    if (!out.flagged.empty())
    {
        const double med = median_of(std::move(unflagged));
        const double ceiling =
            std::isfinite(med) ? clamp.ceiling_over_median * med : 1.0 / clamp.denominator_floor;
        out.ceiling = ceiling;
        for (const auto &[i, j] : out.flagged)
            out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = ceiling;
    }
    return out;
}

MultiFit fit_subspace_multi(const CMatrix &data, std::size_t num_targets, const ArraySetup &setup,
                            std::span<const Location> candidates, double rank_tolerance)
{
    if (num_targets < 1 || num_targets > 2)
        throw std::invalid_argument("fit_subspace_multi supports K = 1 or 2 only");
    if (candidates.empty())
        throw std::invalid_argument("fit_subspace_multi: no candidates");
    if (static_cast<std::size_t>(data.rows()) != setup.size())
        throw std::invalid_argument("data rows do not match the array size");

    const auto m = static_cast<Eigen::Index>(candidates.size());
    CMatrix a(static_cast<Eigen::Index>(setup.size()), m);
    for (Eigen::Index i = 0; i < m; ++i)
        a.col(i) = setup.steering_vector(candidates[static_cast<std::size_t>(i)].theta,
                                         candidates[static_cast<std::size_t>(i)].range);
    const CMatrix b = a.adjoint() * data;
    const CMatrix c = b * b.adjoint(); // A^H X X^H A
    const CMatrix g = a.adjoint() * a;

    MultiFit out;
    out.num_targets = num_targets;
    out.candidates.assign(candidates.begin(), candidates.end());
    const double neg_inf = -std::numeric_limits<double>::infinity();
    out.best_value = neg_inf;

    if (num_targets == 1)
    {
        out.values.resize(static_cast<std::size_t>(m));
        out.rank_deficient.assign(static_cast<std::size_t>(m), false);
        for (Eigen::Index i = 0; i < m; ++i)
        {
            const double gii = g(i, i).real();
            double value = neg_inf;
            if (gii > 0.0)
                value = c(i, i).real() / gii;
            else
                out.rank_deficient[static_cast<std::size_t>(i)] = true;
            out.values[static_cast<std::size_t>(i)] = value;
            if (value > out.best_value)
            {
                out.best_value = value;
                out.best = {static_cast<std::size_t>(i)};
            }
        }
        return out;
    }

    const auto total = static_cast<std::size_t>(m) * static_cast<std::size_t>(m);
    out.values.assign(total, neg_inf);
    out.rank_deficient.assign(total, false);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = i + 1; j < m; ++j)
        {
            const std::size_t idx = static_cast<std::size_t>(i) * static_cast<std::size_t>(m) + static_cast<std::size_t>(j);
            const double gii = g(i, i).real();
            const double gjj = g(j, j).real();
            const cplx gij = g(i, j);
            const double det = gii * gjj - std::norm(gij);
            if (!(det > rank_tolerance * gii * gjj))
            {
                out.rank_deficient[idx] = true;
                continue;
            }
            // tr(G^{-1} C) for the 2x2 blocks.
            const double value =
                (gjj * c(i, i).real() + gii * c(j, j).real() - 2.0 * (std::conj(gij) * c(i, j)).real()) / det;
            out.values[idx] = value;
            if (value > out.best_value)
            {
                out.best_value = value;
                out.best = {static_cast<std::size_t>(i), static_cast<std::size_t>(j)};
            }
        }
    return out;
}

// ---- peaks -----------------------------------------------------------------

PeakExclusion PeakExclusion::from_resolution(std::size_t antennas, double spacing, double wavelength)
{
    const double n = static_cast<double>(antennas);
    return {1.4 * wavelength / (kPi * n * spacing), 5.0 * wavelength / (n * n * spacing * spacing)};
}

InsufficientPeaks::InsufficientPeaks(PeakSet found, std::size_t requested)
    : std::runtime_error("found " + std::to_string(found.peaks.size()) + " of " + std::to_string(requested) +
                         " requested peaks"),
      found_(std::move(found)), requested_(requested)
{
}

PeakSet find_peaks(const SpectrumGrid &spectrum, std::size_t num_peaks, const PeakExclusion &exclusion)
{
    if (num_peaks < 1)
        throw std::invalid_argument("find_peaks: K must be at least 1");
    const auto rows = spectrum.values.rows();
    const auto cols = spectrum.values.cols();

    // A cell is a maximum when it beats every neighbour; equal neighbours are
    // resolved by index order so a plateau yields exactly one maximum.
    std::vector<Peak> candidates;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
        {
            const double v = spectrum.values(i, j);
            bool is_max = std::isfinite(v);
            for (Eigen::Index di = -1; di <= 1 && is_max; ++di)
                for (Eigen::Index dj = -1; dj <= 1 && is_max; ++dj)
                {
                    if (di == 0 && dj == 0)
                        continue;
                    const auto ni = i + di, nj = j + dj;
                    if (ni < 0 || nj < 0 || ni >= rows || nj >= cols)
                        continue;
                    const double w = spectrum.values(ni, nj);
                    const bool neighbour_first = di < 0 || (di == 0 && dj < 0);
                    if (w > v || (w == v && neighbour_first))
                        is_max = false;
                }
            if (is_max)
                candidates.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                                      spectrum.theta.values[static_cast<std::size_t>(i)],
                                      spectrum.range.values[static_cast<std::size_t>(j)], v});
        }

    std::stable_sort(candidates.begin(), candidates.end(), [](const Peak &a, const Peak &b) {
        if (a.value != b.value)
            return a.value > b.value;
        if (a.theta_index != b.theta_index)
            return a.theta_index < b.theta_index;
        return a.range_index < b.range_index;
    });

    PeakSet out;
    for (const auto &p : candidates)
    {
        const bool conflict = std::any_of(out.peaks.begin(), out.peaks.end(), [&](const Peak &q) {
            const double s = std::sin(q.theta);
            return std::abs(std::cos(p.theta) - std::cos(q.theta)) < exclusion.cos_halfwidth &&
                   std::abs(1.0 / p.range - 1.0 / q.range) < exclusion.inverse_range_coefficient / (s * s);
        });
        if (conflict)
            continue;
        out.peaks.push_back(p);
        if (out.peaks.size() == num_peaks)
            return out;
    }
    throw InsufficientPeaks(std::move(out), num_peaks);
}

// ---- refinement ------------------------------------------------------------

namespace
{
// Grid spacing around `value` measured in the refinement coordinate.
double local_width(const GridAxis &axis, double value, bool cosine)
{
    auto coord = [&](double x) { return cosine ? std::cos(x) : 1.0 / x; };
    if (axis.size() < 2)
        return 0.0;
    const auto it = std::lower_bound(axis.values.begin(), axis.values.end(), value);
    std::size_t k = static_cast<std::size_t>(it - axis.values.begin());
    k = std::clamp<std::size_t>(k, 1, axis.size() - 1);
    return std::abs(coord(axis.values[k]) - coord(axis.values[k - 1]));
}
} // namespace

Location refine_peak(const std::function<double(double, double)> &objective, const Location &start,
                     const SearchGrid &grid, int iterations, double max_cells)
{
    const double u0 = std::cos(start.theta);
    const double w0 = 1.0 / start.range;
    const double bu = max_cells * local_width(grid.theta, start.theta, true);
    const double bw = max_cells * local_width(grid.range, start.range, false);
    auto f = [&](double u, double w) { return objective(std::acos(std::clamp(u, -1.0, 1.0)), 1.0 / w); };

    double u = u0, w = w0, best = f(u, w);
    const double hu = 1e-3 * (bu > 0.0 ? bu : 1.0);
    const double hw = 1e-3 * (bw > 0.0 ? bw : w0);
    for (int it = 0; it < iterations; ++it)
    {
        const double fpp = f(u + hu, w), fmp = f(u - hu, w);
        const double fpw = f(u, w + hw), fmw = f(u, w - hw);
        const double guu = (fpp - fmp) / (2 * hu);
        const double gww = bw > 0.0 ? (fpw - fmw) / (2 * hw) : 0.0;
        const double huu = (fpp - 2 * best + fmp) / (hu * hu);
        const double hww = (fpw - 2 * best + fmw) / (hw * hw);
        const double huw =
            (f(u + hu, w + hw) - f(u + hu, w - hw) - f(u - hu, w + hw) + f(u - hu, w - hw)) / (4 * hu * hw);

        Eigen::Vector2d step;
        if (bw > 0.0)
        {
            Eigen::Matrix2d h;
            h << huu, huw, huw, hww;
            Eigen::Vector2d g(guu, gww);
            if (!(h.determinant() > 0.0 && huu < 0.0))
                break;
            step = -h.inverse() * g;
        }
        else
        {
            if (!(huu < 0.0))
                break;
            step = {-guu / huu, 0.0};
        }

        bool accepted = false;
        for (int halving = 0; halving < 10 && !accepted; ++halving, step *= 0.5)
        {
            const double un = std::clamp(u + step[0], u0 - bu, u0 + bu);
            const double wn = bw > 0.0 ? std::clamp(w + step[1], w0 - bw, w0 + bw) : w;
            if (!(wn > 0.0) || std::abs(un) >= 1.0)
                continue;
            const double fn = f(un, wn);
            if (fn >= best)
            {
                accepted = true;
                const bool moved = un != u || wn != w;
                u = un;
                w = wn;
                best = fn;
                if (!moved)
                    return {std::acos(u), 1.0 / w};
            }
        }
        if (!accepted)
            break;
        if (std::abs(step[0]) < 1e-9 * hu && std::abs(step[1]) < 1e-9 * hw)
            break;
    }
    return {std::acos(u), 1.0 / w};
}

} // namespace nearfield
