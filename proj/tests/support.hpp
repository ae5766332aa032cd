#pragma once

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "nearfield/array_model.hpp"
#include "nearfield/random.hpp"

namespace testing
{

using namespace nearfield;

inline constexpr double kCarrier = 28e9;

inline double wavelength() { return kSpeedOfLight / kCarrier; }

inline ArraySetup ula_setup(std::size_t n, double spacing_wavelengths, UlaReference ref = UlaReference::center,
                            SteeringOptions steering = {})
{
    const Waveform w(kCarrier);
    return {ArrayGeometry::ula(n, spacing_wavelengths * w.wavelength(), ref), w, steering};
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// Random Hermitian PSD matrix with a spread spectrum.
inline CMatrix random_psd(RandomStream &rng, Eigen::Index n, Eigen::Index rank)
{
    CMatrix a(n, rank);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < rank; ++j)
            a(i, j) = rng.complex_normal();
    CMatrix r = a * a.adjoint();
    return (r + r.adjoint()) / 2.0;
}

inline double uniform(RandomStream &rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

inline std::filesystem::path source_dir() { return NEARFIELD_SOURCE_DIR; }

} // namespace testing
