#include "support.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <vector>

#include "nearfield/scenario.hpp"
#include "nearfield/subspace.hpp"

using namespace nearfield;
using testing::uniform;

namespace
{

CMatrix random_matrix(RandomStream &rng, Eigen::Index rows, Eigen::Index cols)
{
    CMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = rng.complex_normal();
    return m;
}

Scenario load(const std::string &name)
{
    std::ifstream in(testing::source_dir() / "configs" / name);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str());
}

SearchGrid small_grid(std::size_t nt, std::size_t nr, double rmin = 0.3, double rmax = 6.0)
{
    return {GridAxis::cosine(0.4, kPi - 0.4, nt), GridAxis::inverse(rmin, rmax, nr)};
}

std::pair<std::size_t, std::size_t> argmax(const RMatrix &v)
{
    Eigen::Index i = 0, j = 0;
    v.maxCoeff(&i, &j);
    return {static_cast<std::size_t>(i), static_cast<std::size_t>(j)};
}

} // namespace

TEST_SUITE("covariance")
{
    TEST_CASE("sample covariance")
    {
        CHECK(sample_covariance(CMatrix::Zero(4, 3)).matrix.norm() == 0.0);
        RandomStream rng(1, 0);
        const CVector y = random_matrix(rng, 5, 1);
        CHECK((sample_covariance(y).matrix - y * y.adjoint()).norm() < 1e-14);
        CHECK_THROWS_AS(sample_covariance(CMatrix(4, 0)), std::invalid_argument);

        const CMatrix w = random_matrix(rng, 4, 100000);
        const CMatrix r = sample_covariance(w).matrix;
        CHECK((r - CMatrix::Identity(4, 4)).cwiseAbs().rowwise().sum().maxCoeff() < 0.05);
    }

    TEST_CASE("property: sample covariance is Hermitian PSD")
    {
        RandomStream rng(2, 0);
        for (int c = 0; c < 1000; ++c)
        {
            const auto n = static_cast<Eigen::Index>(2 + rng.next_u32() % 10);
            const auto l = static_cast<Eigen::Index>(1 + rng.next_u32() % 20);
            const CMatrix r = sample_covariance(random_matrix(rng, n, l)).matrix;
            REQUIRE((r - r.adjoint()).norm() <= 1e-12 * r.norm());
            const RVector ev = Eigen::SelfAdjointEigenSolver<CMatrix>(r).eigenvalues();
            REQUIRE(ev.minCoeff() >= -1e-10 * r.trace().real());
        }
    }

    TEST_CASE("eigendecomposition")
    {
        const CMatrix r = 0.7 * CMatrix::Identity(6, 6);
        const auto d0 = eig_decompose(r, 0);
        CHECK((d0.eigenvalues.array() - 0.7).abs().maxCoeff() < 1e-14);
        CHECK(d0.noise_basis.cols() == 6);

        const auto setup = testing::ula_setup(8, 0.5);
        const CVector a = setup.steering_vector(1.1, 2.0);
        const auto d1 = eig_decompose(a * a.adjoint() + 0.3 * CMatrix::Identity(8, 8), 1);
        CHECK(d1.eigenvalues[0] == doctest::Approx(a.squaredNorm() + 0.3));
        CHECK(std::abs(d1.signal_basis.col(0).dot(a)) / a.norm() == doctest::Approx(1.0).epsilon(1e-12));

        RandomStream rng(3, 0);
        const CMatrix p = testing::random_psd(rng, 8, 8);
        const auto d = eig_decompose(p, 3);
        const CMatrix back = d.signal_basis * d.signal_eigenvalues().asDiagonal() * d.signal_basis.adjoint() +
                             d.noise_basis * d.noise_eigenvalues().asDiagonal() * d.noise_basis.adjoint();
        CHECK((back - p).norm() < 1e-10 * p.norm());
        CHECK_THROWS_AS(eig_decompose(p, 8), std::invalid_argument);
    }

    TEST_CASE("property: subspace bases are orthonormal and reconstruct the covariance")
    {
        RandomStream rng(4, 0);
        for (int c = 0; c < 1000; ++c)
        {
            const auto n = static_cast<Eigen::Index>(2 + rng.next_u32() % 11);
            const auto k = static_cast<std::size_t>(rng.next_u32() % static_cast<std::uint32_t>(n));
            const CMatrix p = testing::random_psd(rng, n, 1 + rng.next_u32() % static_cast<std::uint32_t>(n));
            const auto d = eig_decompose(p, k);
            const auto ki = static_cast<Eigen::Index>(k);
            REQUIRE((d.signal_basis.adjoint() * d.signal_basis - CMatrix::Identity(ki, ki)).norm() < 1e-10);
            REQUIRE((d.noise_basis.adjoint() * d.noise_basis - CMatrix::Identity(n - ki, n - ki)).norm() < 1e-10);
            REQUIRE((d.signal_basis.adjoint() * d.noise_basis).norm() < 1e-10);
            const CMatrix back = d.signal_basis * d.signal_eigenvalues().asDiagonal() * d.signal_basis.adjoint() +
                                 d.noise_basis * d.noise_eigenvalues().asDiagonal() * d.noise_basis.adjoint();
            REQUIRE((back - p).norm() <= 1e-10 * p.norm());
            for (Eigen::Index i = 1; i < n; ++i)
                REQUIRE(d.eigenvalues[i] <= d.eigenvalues[i - 1]);
        }
    }

    TEST_CASE("model order")
    {
        CHECK(estimate_num_targets((RVector(5) << 10, 10, 1, 1, 1).finished(), 5.0) == 2);
        CHECK(estimate_num_targets(RVector::Constant(7, 2.0), 5.0) == 0);

        const Scenario sc = load("fig2_spectrum.json");
        int hits = 0;
        const int seeds = 40;
        for (int s = 0; s < seeds; ++s)
        {
            const auto snap = synthesize_fixed(sc.setup(), sc.fixed_targets(), sc.source, sc.samples, sc.noise(),
                                               derive_seed(77, static_cast<std::uint64_t>(s)));
            const RVector ev = Eigen::SelfAdjointEigenSolver<CMatrix>(sample_covariance(snap.data).matrix,
                                                                      Eigen::EigenvaluesOnly).eigenvalues().reverse();
            hits += estimate_num_targets(ev, sc.spectrum.ratio) == 5;
        }
        CHECK(hits >= 0.95 * seeds);
    }

    TEST_CASE("property: signal subspace approaches the steering span as L grows")
    {
        const auto setup = testing::ula_setup(16, 0.5);
        const std::vector<TargetState> t{{1.0, 2.0}, {1.7, 3.5}};
        CMatrix a(16, 2);
        a.col(0) = setup.steering_vector(1.0, 2.0);
        a.col(1) = setup.steering_vector(1.7, 3.5);
        const CMatrix qa = Eigen::HouseholderQR<CMatrix>(a).householderQ() * CMatrix::Identity(16, 2);
        double prev = 10.0;
        for (std::size_t l : {100, 1000, 10000})
        {
            std::vector<double> angles;
            for (std::uint64_t s = 0; s < 21; ++s)
            {
                const auto snap = synthesize_fixed(setup, t, SourceModel::gaussian, l, {1.0}, s);
                const auto d = eig_decompose(sample_covariance(snap.data).matrix, 2);
                const RVector sv = Eigen::JacobiSVD<CMatrix>(qa.adjoint() * d.signal_basis).singularValues();
                angles.push_back(std::acos(std::min(1.0, sv.minCoeff())));
            }
            std::nth_element(angles.begin(), angles.begin() + 10, angles.end());
            CHECK(angles[10] <= prev);
            prev = angles[10];
        }
    }
}

TEST_SUITE("spectra")
{
    TEST_CASE("noiseless single-target spectra peak at the truth")
    {
        const auto setup = testing::ula_setup(12, 0.5);
        const SearchGrid grid = small_grid(41, 31);
        const Location truth{grid.theta.values[17], grid.range.values[9]};
        const std::vector<TargetState> t{{truth.theta, truth.range}};
        const auto snap = synthesize_fixed(setup, t, SourceModel::gaussian, 20, {}, 8);
        const auto dml = spectrum_single(snap.data, setup, grid);
        CHECK(argmax(dml.values) == std::pair<std::size_t, std::size_t>{17, 9});

        const auto d = eig_decompose(sample_covariance(snap.data).matrix, 1);
        const auto music_signal = spectrum_single(d.signal_basis, setup, grid);
        CHECK(music_signal.values.minCoeff() >= 0.0);
        CHECK(music_signal.values.maxCoeff() <= 1.0 + 1e-12);
        CHECK(music_signal.values(17, 9) == doctest::Approx(1.0).epsilon(1e-10));

        const auto music = music_spectrum_noise(d.noise_basis, setup, grid);
        REQUIRE(music.flagged.size() == 1);
        CHECK(music.flagged[0] == std::pair<std::size_t, std::size_t>{17, 9});
        REQUIRE(music.ceiling.has_value());
        CHECK(music.values(17, 9) == *music.ceiling);
    }

    TEST_CASE("music value for a direction orthogonal to the signal space")
    {
        RandomStream rng(10, 0);
        const auto setup = testing::ula_setup(8, 0.5);
        const CVector a1 = setup.steering_vector(1.3, 2.0);
        CVector v = random_matrix(rng, 8, 1);
        v -= a1 * (a1.dot(v) / a1.squaredNorm());
        const auto d = eig_decompose(v * v.adjoint(), 1);
        const SearchGrid grid{GridAxis::single(1.3), GridAxis::single(2.0)};
        CHECK(music_spectrum_noise(d.noise_basis, setup, grid).values(0, 0) == doctest::Approx(1.0 / 8).epsilon(1e-10));
    }

    TEST_CASE("property: spectrum scale invariance and projection bound")
    {
        RandomStream rng(5, 0);
        const auto setup = testing::ula_setup(6, 0.5);
        const SearchGrid grid = small_grid(7, 6);
        for (int c = 0; c < 1000; ++c)
        {
            const CMatrix x = random_matrix(rng, 6, 1 + rng.next_u32() % 4);
            const cplx scale = rng.complex_normal() * 3.0 + 0.01;
            const auto s1 = spectrum_single(x, setup, grid);
            const auto s2 = spectrum_single(scale * x, setup, grid);
            REQUIRE(argmax(s1.values) == argmax(s2.values));
            REQUIRE((s2.values - std::norm(scale) * s1.values).cwiseAbs().maxCoeff() <=
                    1e-10 * s2.values.maxCoeff());
            REQUIRE(s1.values.minCoeff() >= 0.0);
            REQUIRE(s1.values.maxCoeff() <= x.squaredNorm() * (1 + 1e-12));
        }
    }

    TEST_CASE("property: noiseless MUSIC denominator vanishes at every truth")
    {
        RandomStream rng(6, 0);
        for (int c = 0; c < 1000; ++c)
        {
            const auto n = static_cast<std::size_t>(6 + rng.next_u32() % 10);
            const auto setup = testing::ula_setup(n, 0.5);
            const std::size_t k = 1 + rng.next_u32() % 3;
            std::vector<TargetState> t;
            for (std::size_t i = 0; i < k; ++i)
                t.push_back({0.3 + 2.5 * (double(i) + rng.uniform()) / double(k), uniform(rng, 0.5, 5.0)});
            const auto snap = synthesize_fixed(setup, t, SourceModel::gaussian, k + rng.next_u32() % 5, {},
                                               rng.next_u32());
            const auto d = eig_decompose(sample_covariance(snap.data).matrix, k);
            for (const auto &target : t)
                REQUIRE((d.noise_basis.adjoint() * setup.steering_vector(target.theta, target.range)).squaredNorm() <
                        1e-10);
        }
    }

    TEST_CASE("property: halving the grid step never moves the noiseless peak away from the truth")
    {
        // Distance between locations is the chordal distance between their
        // response vectors, 1 - |a^H a0|^2 / (|a|^2 |a0|^2).
        RandomStream rng(7, 0);
        const auto setup = testing::ula_setup(16, 0.5);
        for (int c = 0; c < 1000; ++c)
        {
            const std::vector<TargetState> t{{uniform(rng, 0.8, kPi - 0.8), uniform(rng, 0.2, 0.8)}};
            const auto snap = synthesize_fixed(setup, t, SourceModel::gaussian, 2, {}, rng.next_u32());
            const auto d = eig_decompose(sample_covariance(snap.data).matrix, 1);
            const CVector a0 = setup.steering_vector(t[0].theta, t[0].range);

            double prev = 2.0;
            for (std::size_t m : {17, 33, 65})
            {
                const SearchGrid grid = small_grid(m, m, 0.15, 1.5);
                const auto [i, j] = argmax(spectrum_single(d.signal_basis, setup, grid).values);
                const CVector a = setup.steering_vector(grid.theta.values[i], grid.range.values[j]);
                const double dist = 1.0 - std::norm(a.dot(a0)) / (a.squaredNorm() * a0.squaredNorm());
                REQUIRE(dist <= prev + 1e-9);
                prev = dist;
            }
        }
    }

    TEST_CASE("five-target spectrum reference config")
    {
        const Scenario sc = load("fig2_spectrum.json");
        const auto out = run_spectrum(sc, sc.seed);
        REQUIRE(out.num_targets == 5);
        for (const auto &m : out.methods)
        {
            REQUIRE(m.matches.size() == 5);
            for (const auto &match : m.matches)
            {
                CHECK(match.theta_cells <= 1.0 + 1e-6);
                CHECK(match.range_cells <= 1.0 + 1e-6);
            }
        }
        CHECK(out.methods[1].contrast > out.methods[0].contrast);

        // Noise-subspace and signal-subspace MUSIC agree on peak locations.
        Scenario signal = sc;
        signal.spectrum.methods = {"music"};
        signal.spectrum.music_form = "signal";
        const auto alt = run_spectrum(signal, sc.seed);
        const auto &a = out.methods[1].matches, &b = alt.methods[0].matches;
        REQUIRE(a.size() == b.size());
        for (std::size_t k = 0; k < a.size(); ++k)
            for (const auto &mb : b)
                if (mb.target == a[k].target)
                {
                    CHECK(std::abs(double(mb.peak.theta_index) - double(a[k].peak.theta_index)) <= 1.0);
                    CHECK(std::abs(double(mb.peak.range_index) - double(a[k].peak.range_index)) <= 1.0);
                }
    }
}

TEST_SUITE("multi-target fit")
{
    TEST_CASE("K=1 matches the single-target spectrum")
    {
        RandomStream rng(8, 0);
        const auto setup = testing::ula_setup(8, 0.5);
        const SearchGrid grid = small_grid(5, 4);
        std::vector<Location> cands;
        for (double th : grid.theta.values)
            for (double r : grid.range.values)
                cands.push_back({th, r});
        const CMatrix x = random_matrix(rng, 8, 3);
        const auto fit = fit_subspace_multi(x, 1, setup, cands);
        const auto spec = spectrum_single(x, setup, grid);
        for (std::size_t i = 0; i < cands.size(); ++i)
            CHECK(fit.values[i] == doctest::Approx(spec.values(Eigen::Index(i / 4), Eigen::Index(i % 4))).epsilon(1e-12));
    }

    TEST_CASE("K=2 noiseless argmax is the truth pair")
    {
        const auto setup = testing::ula_setup(12, 0.5);
        const SearchGrid grid = small_grid(9, 7);
        std::vector<Location> cands;
        for (double th : grid.theta.values)
            for (double r : grid.range.values)
                cands.push_back({th, r});
        const std::vector<TargetState> t{{cands[10].theta, cands[10].range}, {cands[47].theta, cands[47].range}};
        const auto snap = synthesize_fixed(setup, t, SourceModel::gaussian, 10, {}, 3);
        const auto fit = fit_subspace_multi(snap.data, 2, setup, cands);
        CHECK(fit.best == std::vector<std::size_t>{10, 47});
    }

    TEST_CASE("near-coincident candidates are flagged rank deficient")
    {
        const auto setup = testing::ula_setup(8, 0.5);
        const std::vector<Location> cands{{1.0, 2.0}, {1.0 + 1e-7, 2.0}, {2.0, 3.0}};
        const CMatrix x = CMatrix::Ones(8, 1);
        const auto fit = fit_subspace_multi(x, 2, setup, cands);
        CHECK(fit.rank_deficient[0 * 3 + 1]);
        CHECK_FALSE(fit.rank_deficient[0 * 3 + 2]);
    }
}

TEST_SUITE("peaks")
{
    TEST_CASE("unimodal surface and insufficient peaks")
    {
        const SearchGrid grid = small_grid(6, 5);
        SpectrumGrid s{grid.theta, grid.range, RMatrix(6, 5), "dml", false, {}, std::nullopt};
        for (Eigen::Index i = 0; i < 6; ++i)
            for (Eigen::Index j = 0; j < 5; ++j)
                s.values(i, j) = -std::pow(double(i) - 3.2, 2) - std::pow(double(j) - 1.1, 2);
        const auto p = find_peaks(s, 1, {});
        REQUIRE(p.peaks.size() == 1);
        CHECK(p.peaks[0].theta_index == 3);
        CHECK(p.peaks[0].range_index == 1);
        CHECK_THROWS_AS(find_peaks(s, 31, {}), InsufficientPeaks);
    }

    TEST_CASE("plateau yields exactly one maximum at the lowest index")
    {
        const SearchGrid grid = small_grid(4, 4);
        SpectrumGrid s{grid.theta, grid.range, RMatrix::Ones(4, 4), "dml", false, {}, std::nullopt};
        try
        {
            find_peaks(s, 2, {});
            FAIL("expected InsufficientPeaks");
        }
        catch (const InsufficientPeaks &e)
        {
            REQUIRE(e.found().peaks.size() == 1);
            CHECK(e.found().peaks[0].theta_index == 0);
            CHECK(e.found().peaks[0].range_index == 0);
        }
    }

    TEST_CASE("property: peaks are strict local maxima, sorted and mutually excluded")
    {
        RandomStream rng(9, 0);
        const SearchGrid grid = small_grid(14, 12);
        for (int c = 0; c < 1000; ++c)
        {
            SpectrumGrid s{grid.theta, grid.range, RMatrix(14, 12), "dml", false, {}, std::nullopt};
            for (Eigen::Index i = 0; i < 14; ++i)
                for (Eigen::Index j = 0; j < 12; ++j)
                    s.values(i, j) = std::floor(rng.uniform() * 20.0); // ties are common
            const PeakExclusion ex{uniform(rng, 0.0, 0.3), uniform(rng, 0.0, 0.5)};
            PeakSet found;
            try
            {
                found = find_peaks(s, 1 + rng.next_u32() % 10, ex);
            }
            catch (const InsufficientPeaks &e)
            {
                found = e.found();
            }
            for (std::size_t a = 0; a < found.peaks.size(); ++a)
            {
                const auto &p = found.peaks[a];
                if (a)
                    REQUIRE(p.value <= found.peaks[a - 1].value);
                for (int di = -1; di <= 1; ++di)
                    for (int dj = -1; dj <= 1; ++dj)
                    {
                        const long ni = long(p.theta_index) + di, nj = long(p.range_index) + dj;
                        if ((di || dj) && ni >= 0 && nj >= 0 && ni < 14 && nj < 12)
                            REQUIRE(s.values(ni, nj) <= p.value);
                    }
                for (std::size_t b = 0; b < a; ++b)
                {
                    const auto &q = found.peaks[b];
                    const bool close = std::abs(std::cos(p.theta) - std::cos(q.theta)) < ex.cos_halfwidth &&
                                       std::abs(1 / p.range - 1 / q.range) <
                                           ex.inverse_range_coefficient / std::pow(std::sin(q.theta), 2);
                    REQUIRE_FALSE(close);
                }
            }
        }
    }
}

TEST_SUITE("refinement")
{
    TEST_CASE("refine converges to an off-grid maximum and respects the cell bound")
    {
        const SearchGrid grid = small_grid(21, 21);
        const double u = grid.theta.step(), w = grid.range.step();
        const double u_star = std::cos(grid.theta.values[10]) + 0.37 * u;
        const double w_star = 1.0 / grid.range.values[10] - 0.42 * w;
        auto bowl = [&](double cu, double cw) {
            return [=](double th, double r) {
                return -std::pow((std::cos(th) - cu) / u, 2) - 2 * std::pow((1 / r - cw) / w, 2) +
                       0.3 * (std::cos(th) - cu) / u * (1 / r - cw) / w;
            };
        };
        const Location start{grid.theta.values[10], grid.range.values[10]};
        const Location near = refine_peak(bowl(u_star, w_star), start, grid);
        CHECK(std::cos(near.theta) == doctest::Approx(u_star).epsilon(1e-8));
        CHECK(1 / near.range == doctest::Approx(w_star).epsilon(1e-8));

        const Location far = refine_peak(bowl(u_star + 12 * u, w_star), start, grid);
        CHECK(std::abs(std::cos(far.theta) - std::cos(start.theta)) <= 4 * u * (1 + 1e-9));
    }
}
