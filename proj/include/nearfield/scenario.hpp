#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nearfield/analysis.hpp"
#include "nearfield/io.hpp"
#include "nearfield/subspace.hpp"
#include "nearfield/symmetric_ula.hpp"
#include "nearfield/tracking.hpp"

namespace nearfield
{

inline constexpr const char *kToolkitVersion = "0.3.0";
inline constexpr const char *kSnrDefinition =
    "per-antenna received power of a unit-amplitude target (unit-amplitude steering) divided by the noise variance";

// Malformed configuration. `field` is the dotted path of the offending key.
class ScenarioError : public std::invalid_argument
{
public:
    ScenarioError(std::string field, const std::string &message)
        : std::invalid_argument(message), field_(std::move(field)) {}
    const std::string &field() const { return field_; }

private:
    std::string field_;
};

enum class Command
{
    simulate,
    spectrum,
    modified_music,
    track,
    crb,
    af,
    monte_carlo
};

Command parse_command(const std::string &name);
std::string command_name(Command command);

struct GridSpec
{
    std::size_t points = 0;
    double lower = 0.0;
    double upper = 0.0;
    AxisSpacing spacing = AxisSpacing::linear;

    GridAxis axis() const;
};

struct ArraySpec
{
    std::string type = "ula"; // ula | symmetric_ula | positions
    std::size_t antennas = 0;
    std::optional<double> spacing_m;
    std::optional<double> spacing_wavelengths;
    UlaReference reference = UlaReference::center;
    std::vector<Point2> positions;
};

struct TargetSpec
{
    double theta = 0.0;
    double range = 0.0;
    double gain = 1.0;
    double phase = 0.0;
    double clock_offset = 0.0;
    double radial_velocity = 0.0;
    double transverse_velocity = 0.0;

    MotionState motion() const;
};

struct SpectrumSpec
{
    std::vector<std::string> methods{"dml", "music"};
    std::optional<std::size_t> num_targets;
    double ratio = 10.0;
    std::string music_form = "noise"; // noise | signal
    bool refine = false;
};

struct ModifiedMusicSpec
{
    std::size_t windows = 0;
    std::optional<std::size_t> num_targets;
};

struct TrackSpec
{
    std::array<double, 4> process_noise{0.0, 0.0, 0.01, 0.01};
    std::string source_knowledge = "injected"; // known | injected | estimated
    double source_error_db = -3.0;
    double init_range_std = 0.05;
    double init_theta_std = 0.01;
    double init_velocity_std = 5.0;
    std::string gain = "closed_form"; // closed_form | gradient
    std::string jacobian = "analytic";
    bool reinitialize = true;
};

struct CrbSpec
{
    std::vector<double> thetas;
    std::vector<double> ranges;
    bool numerical = true;
};

struct AfSpec
{
    double theta0 = kPi / 2;
    double r0 = 0.0;
    GridSpec range;
    std::size_t direction_points = 401;
};

struct MonteCarloSpec
{
    std::size_t trials = 200;
    std::string axis = "snr_db"; // snr_db | samples | r_m
    std::vector<double> values;
    std::string estimator = "music"; // music | dml
    bool refine = true;
};

struct Scenario
{
    Command command = Command::spectrum;
    std::uint64_t seed = 0;
    double carrier_hz = 0.0;
    ArraySpec array;
    SteeringOptions steering;
    std::vector<TargetSpec> targets;
    std::optional<double> snr_db;
    std::optional<double> noise_variance;
    std::size_t samples = 1;
    double sample_interval = 0.0;
    double cpi = 1e-3;
    std::size_t cpis = 1;
    SourceModel source = SourceModel::gaussian;
    GridSpec theta_grid;
    GridSpec range_grid;
    SpectrumSpec spectrum;
    ModifiedMusicSpec modified_music;
    TrackSpec track;
    CrbSpec crb;
    AfSpec af;
    MonteCarloSpec monte_carlo;

    io::json resolved; // every field, defaults filled in

    ArraySetup setup() const;
    NoiseModel noise() const;
    double snr_linear() const; // 1 / variance for unit-amplitude targets
    SearchGrid grid() const { return {theta_grid.axis(), range_grid.axis()}; }
    std::vector<TargetState> fixed_targets() const;
    std::vector<MotionState> moving_targets() const;
};

// Strict parse: unknown keys and type mismatches raise ScenarioError naming the
// field; estimator preconditions raise ValidityError. `text` may also be a run
// manifest, whose embedded scenario is used.
Scenario parse_scenario(const std::string &text, std::optional<Command> command = std::nullopt);
Scenario parse_scenario(const io::json &document, std::optional<Command> command = std::nullopt);

io::json manifest(const Scenario &scenario);

// ---- deterministic parallel map --------------------------------------------

// Runs fn(i) for i in [0, count) on up to `workers` threads (0 = hardware
// concurrency). Callers write results by index, so output is independent of
// scheduling. The first exception is rethrown after all workers stop.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)> &fn);

// ---- experiment kernels (no file output) -----------------------------------

struct MatchedEstimate
{
    std::size_t target = 0;
    Peak peak;
    double theta_cells = 0.0; // |error| in grid steps along each axis
    double range_cells = 0.0;
};

// Minimum-total-cost assignment of peaks to truths in grid-step units.
std::vector<MatchedEstimate> match_peaks(const PeakSet &peaks, std::span<const TargetSpec> truths,
                                         const SearchGrid &grid);

// Lower of the two spectrum maxima near the truths divided by the spectrum
// minimum on the straight grid segment joining them.
double pair_contrast(const SpectrumGrid &spectrum, const TargetSpec &a, const TargetSpec &b);
// Indices of the truth pair closest in grid-step units.
std::pair<std::size_t, std::size_t> closest_pair(std::span<const TargetSpec> truths, const SearchGrid &grid);

struct SpectrumMethodResult
{
    std::string method;
    SpectrumGrid spectrum;
    PeakSet peaks;
    std::vector<Location> refined;
    std::vector<MatchedEstimate> matches;
    double contrast = 0.0; // closest pair; 0 when K < 2
};

struct SpectrumOutcome
{
    std::size_t num_targets = 0;
    RVector eigenvalues;
    std::vector<SpectrumMethodResult> methods;
};

SpectrumOutcome run_spectrum(const Scenario &scenario, std::uint64_t seed);

struct ModifiedMusicOutcome
{
    std::size_t num_targets = 0;
    ModifiedMusicResult result;
    std::vector<MatchedEstimate> matches;
    SearchGrid grid;
};

ModifiedMusicOutcome run_modified_music(const Scenario &scenario, std::uint64_t seed);

struct TrackOutcome
{
    std::vector<FilterState> truth; // CPI 0..cpis
    FilterState initial;
    Trajectory trajectory;            // CPI 1..cpis
    std::vector<double> location_error; // m, CPI 1..cpis
    std::vector<double> velocity_error; // m/s
};

TrackOutcome run_track(const Scenario &scenario, std::uint64_t seed);

// Single-target (first target) estimate from one snapshot set.
Location estimate_single(const Scenario &scenario, const CMatrix &snapshots, const std::string &estimator,
                         bool refine);

struct MonteCarloPoint
{
    double value = 0.0; // sweep value
    std::vector<double> theta_errors;
    std::vector<double> range_errors;
    double rmse_theta = 0.0;
    double rmse_r = 0.0;
    double crb_theta = 0.0; // closed form (NaN when the array is not a ULA)
    double crb_r = 0.0;
    double fim_crb_theta = 0.0; // numerical FIM for the scenario's own model
    double fim_crb_r = 0.0;
};

std::vector<MonteCarloPoint> run_monte_carlo(const Scenario &scenario, std::size_t workers = 0);

struct RunSummary
{
    std::filesystem::path directory;
    io::json metrics;
    std::vector<std::string> files;
};

// Executes scenario.command and writes manifest.json, metrics.json, run.json
// and command-specific CSV files under `out`.
RunSummary run(const Scenario &scenario, const std::filesystem::path &out, std::size_t workers = 0);

} // namespace nearfield
