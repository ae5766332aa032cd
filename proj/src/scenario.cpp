#include "nearfield/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "nearfield/random.hpp"

namespace nearfield
{

using io::json;

std::string error_kind(const std::exception &error)
{
    if (dynamic_cast<const ScenarioError *>(&error))
        return "config";
    if (dynamic_cast<const ValidityError *>(&error))
        return "validity";
    if (dynamic_cast<const IdentifiabilityError *>(&error))
        return "identifiability";
    if (dynamic_cast<const DegenerateGeometry *>(&error))
        return "degenerate-geometry";
    if (dynamic_cast<const SingularGeometry *>(&error))
        return "singular-geometry";
    if (dynamic_cast<const TargetPassedOrigin *>(&error))
        return "target-passed-origin";
    if (dynamic_cast<const InvalidState *>(&error))
        return "invalid-state";
    if (dynamic_cast<const InsufficientPeaks *>(&error))
        return "insufficient-peaks";
    if (dynamic_cast<const NoPeak *>(&error))
        return "no-peak";
    if (dynamic_cast<const FilterDivergence *>(&error))
        return "filter-divergence";
    if (dynamic_cast<const std::invalid_argument *>(&error))
        return "invalid-argument";
    return "internal";
}

Command parse_command(const std::string &name)
{
    static const std::pair<const char *, Command> table[] = {
        {"simulate", Command::simulate}, {"spectrum", Command::spectrum},
        {"modified-music", Command::modified_music}, {"track", Command::track},
        {"crb", Command::crb}, {"af", Command::af}, {"monte-carlo", Command::monte_carlo}};
    for (const auto &[key, value] : table)
        if (name == key)
            return value;
    throw ScenarioError("command", "unknown command '" + name + "'");
}

std::string command_name(Command command)
{
    switch (command)
    {
    case Command::simulate:
        return "simulate";
    case Command::spectrum:
        return "spectrum";
    case Command::modified_music:
        return "modified-music";
    case Command::track:
        return "track";
    case Command::crb:
        return "crb";
    case Command::af:
        return "af";
    case Command::monte_carlo:
        return "monte-carlo";
    }
    return "spectrum";
}

// ---- strict reader -------------------------------------------------------------

namespace
{
std::string join_path(const std::string &base, const std::string &key)
{
    return base.empty() ? key : base + "." + key;
}

// Reads fields from one JSON object, records every resolved value in `out`
// and rejects keys that were never read.
class Reader
{
public:
    Reader(const json &in, std::string path, json &out) : in_(in), path_(std::move(path)), out_(out)
    {
        if (!in_.is_object())
            throw ScenarioError(path_.empty() ? "<root>" : path_, "'" + path_ + "' must be an object");
        out_ = json::object();
    }

    bool has(const std::string &key) const { return in_.contains(key) && !in_.at(key).is_null(); }

    double number(const std::string &key) { return record(key, as_number(key)); }
    double number(const std::string &key, double fallback) { return has(key) ? number(key) : record(key, fallback); }
    std::optional<double> maybe_number(const std::string &key)
    {
        if (!has(key))
        {
            seen_.push_back(key);
            return std::nullopt;
        }
        return number(key);
    }

    std::uint64_t unsigned_int(const std::string &key)
    {
        seen_.push_back(key);
        const json &v = in_.at(key);
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
            throw ScenarioError(join_path(path_, key), "field '" + join_path(path_, key) +
                                                           "' must be a non-negative integer");
        const auto value = v.get<std::uint64_t>();
        out_[key] = value;
        return value;
    }
    std::uint64_t unsigned_int(const std::string &key, std::uint64_t fallback)
    {
        if (has(key))
            return unsigned_int(key);
        seen_.push_back(key);
        out_[key] = fallback;
        return fallback;
    }
    std::optional<std::uint64_t> maybe_unsigned(const std::string &key)
    {
        if (!has(key))
        {
            seen_.push_back(key);
            out_[key] = nullptr;
            return std::nullopt;
        }
        return unsigned_int(key);
    }

    std::string string(const std::string &key, const std::string &fallback, std::initializer_list<const char *> allowed)
    {
        seen_.push_back(key);
        std::string value = fallback;
        if (has(key))
        {
            const json &v = in_.at(key);
            if (!v.is_string())
                throw ScenarioError(join_path(path_, key), "field '" + join_path(path_, key) + "' must be a string");
            value = v.get<std::string>();
        }
        if (allowed.size() && std::none_of(allowed.begin(), allowed.end(), [&](const char *a) { return value == a; }))
            throw ScenarioError(join_path(path_, key), "field '" + join_path(path_, key) + "' has invalid value '" +
                                                           value + "'");
        out_[key] = value;
        return value;
    }

    bool boolean(const std::string &key, bool fallback)
    {
        seen_.push_back(key);
        bool value = fallback;
        if (has(key))
        {
            const json &v = in_.at(key);
            if (!v.is_boolean())
                throw ScenarioError(join_path(path_, key), "field '" + join_path(path_, key) + "' must be a boolean");
            value = v.get<bool>();
        }
        out_[key] = value;
        return value;
    }

    std::vector<double> numbers(const std::string &key, const std::vector<double> &fallback, bool required = false)
    {
        seen_.push_back(key);
        if (!has(key))
        {
            if (required)
                throw ScenarioError(join_path(path_, key), "missing required field '" + join_path(path_, key) + "'");
            out_[key] = fallback;
            return fallback;
        }
        const json &v = in_.at(key);
        if (!v.is_array())
            throw ScenarioError(join_path(path_, key), "field '" + join_path(path_, key) + "' must be an array");
        std::vector<double> values;
        for (const auto &e : v)
        {
            if (!e.is_number())
                throw ScenarioError(join_path(path_, key), "field '" + join_path(path_, key) +
                                                               "' must contain numbers");
            values.push_back(e.get<double>());
        }
        out_[key] = values;
        return values;
    }

    std::vector<std::string> strings(const std::string &key, const std::vector<std::string> &fallback,
                                     std::initializer_list<const char *> allowed)
    {
        seen_.push_back(key);
        std::vector<std::string> values = fallback;
        if (has(key))
        {
            const json &v = in_.at(key);
            if (!v.is_array())
                throw ScenarioError(join_path(path_, key), "field '" + join_path(path_, key) + "' must be an array");
            values.clear();
            for (const auto &e : v)
            {
                if (!e.is_string())
                    throw ScenarioError(join_path(path_, key), "field '" + join_path(path_, key) +
                                                                   "' must contain strings");
                values.push_back(e.get<std::string>());
            }
        }
        for (const auto &value : values)
            if (std::none_of(allowed.begin(), allowed.end(), [&](const char *a) { return value == a; }))
                throw ScenarioError(join_path(path_, key), "field '" + join_path(path_, key) +
                                                               "' has invalid entry '" + value + "'");
        out_[key] = values;
        return values;
    }

    // Child object; absent children read as empty objects so defaults apply.
    Reader child(const std::string &key)
    {
        seen_.push_back(key);
        static const json empty = json::object();
        const json &v = has(key) ? in_.at(key) : empty;
        out_[key] = json::object();
        return Reader(v, join_path(path_, key), out_[key]);
    }

    const json &raw(const std::string &key)
    {
        seen_.push_back(key);
        return in_.at(key);
    }
    json &out() { return out_; }
    const std::string &path() const { return path_; }
    std::string field(const std::string &key) const { return join_path(path_, key); }

    void finish() const
    {
        for (auto it = in_.begin(); it != in_.end(); ++it)
            if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
                throw ScenarioError(join_path(path_, it.key()), "unknown field '" + join_path(path_, it.key()) + "'");
    }

private:
    double as_number(const std::string &key)
    {
        seen_.push_back(key);
        if (!in_.contains(key))
            throw ScenarioError(join_path(path_, key), "missing required field '" + join_path(path_, key) + "'");
        const json &v = in_.at(key);
        if (!v.is_number())
            throw ScenarioError(join_path(path_, key), "field '" + join_path(path_, key) + "' must be a number");
        const double value = v.get<double>();
        if (!std::isfinite(value))
            throw ScenarioError(join_path(path_, key), "field '" + join_path(path_, key) + "' must be finite");
        return value;
    }
    double record(const std::string &key, double value)
    {
        if (std::find(seen_.begin(), seen_.end(), key) == seen_.end())
            seen_.push_back(key);
        out_[key] = value;
        return value;
    }

    const json &in_;
    std::string path_;
    json &out_;
    std::vector<std::string> seen_;
};

AxisSpacing spacing_from(const std::string &name)
{
    if (name == "cosine")
        return AxisSpacing::cosine;
    if (name == "inverse")
        return AxisSpacing::inverse;
    return AxisSpacing::linear;
}

const char *spacing_to(AxisSpacing s)
{
    switch (s)
    {
    case AxisSpacing::cosine:
        return "cosine";
    case AxisSpacing::inverse:
        return "inverse";
    case AxisSpacing::linear:
        break;
    }
    return "linear";
}

GridSpec read_grid(Reader r, const std::string &unit, const GridSpec &fallback)
{
    GridSpec g;
    g.points = r.unsigned_int("points", fallback.points);
    g.lower = r.number("lower_" + unit, fallback.lower);
    g.upper = r.number("upper_" + unit, fallback.upper);
    g.spacing = spacing_from(r.string("spacing", spacing_to(fallback.spacing), {"linear", "cosine", "inverse"}));
    r.finish();
    if (g.points == 0)
        throw ScenarioError(r.field("points"), "grid needs at least one point");
    if (!(g.upper >= g.lower))
        throw ScenarioError(r.path(), "grid bounds are reversed");
    return g;
}

void check_positive(double value, const std::string &field)
{
    if (!(value > 0.0))
        throw ScenarioError(field, "field '" + field + "' must be positive");
}
} // namespace

GridAxis GridSpec::axis() const
{
    switch (spacing)
    {
    case AxisSpacing::cosine:
        return GridAxis::cosine(lower, upper, points);
    case AxisSpacing::inverse:
        return GridAxis::inverse(lower, upper, points);
    case AxisSpacing::linear:
        break;
    }
    return GridAxis::linear(lower, upper, points);
}

MotionState TargetSpec::motion() const
{
    return {{theta, range, std::polar(gain, phase), clock_offset}, radial_velocity, transverse_velocity};
}

ArraySetup Scenario::setup() const
{
    const Waveform waveform(carrier_hz);
    const double lambda = waveform.wavelength();
    return {array.type == "positions"
                ? ArrayGeometry(array.positions)
                : (array.type == "symmetric_ula"
                       ? SymmetricUla((array.antennas - 1) / 2,
                                      array.spacing_m ? *array.spacing_m : *array.spacing_wavelengths * lambda)
                             .geometry()
                       : ArrayGeometry::ula(array.antennas,
                                            array.spacing_m ? *array.spacing_m : *array.spacing_wavelengths * lambda,
                                            array.reference)),
            waveform, steering};
}

NoiseModel Scenario::noise() const
{
    if (noise_variance)
        return {*noise_variance};
    return NoiseModel::from_snr_db(snr_db.value_or(0.0));
}

double Scenario::snr_linear() const { return 1.0 / noise().variance; }

std::vector<TargetState> Scenario::fixed_targets() const
{
    std::vector<TargetState> out;
    for (const auto &t : targets)
        out.push_back(t.motion().target);
    return out;
}

std::vector<MotionState> Scenario::moving_targets() const
{
    std::vector<MotionState> out;
    for (const auto &t : targets)
        out.push_back(t.motion());
    return out;
}

Scenario parse_scenario(const std::string &text, std::optional<Command> command)
{
    json document;
    try
    {
        document = json::parse(text);
    }
    catch (const json::parse_error &e)
    {
        throw ScenarioError("<root>", std::string("config is not valid JSON: ") + e.what());
    }
    return parse_scenario(document, command);
}

Scenario parse_scenario(const json &input, std::optional<Command> command)
{
    const json &document =
        input.is_object() && input.contains("toolkit_version") && input.contains("scenario") ? input.at("scenario") : input;

    Scenario sc;
    json resolved;
    Reader root(document, "", resolved);

    const std::string given = root.string("command", command ? command_name(*command) : "spectrum",
                                          {"simulate", "spectrum", "modified-music", "track", "crb", "af",
                                           "monte-carlo"});
    sc.command = command ? *command : parse_command(given);
    root.out()["command"] = command_name(sc.command);

    if (!root.has("seed"))
        throw ScenarioError("seed", "missing required field 'seed'");
    sc.seed = root.unsigned_int("seed");

    {
        Reader w = root.child("waveform");
        sc.carrier_hz = w.number("carrier_hz");
        w.finish();
        check_positive(sc.carrier_hz, "waveform.carrier_hz");
    }
    const double lambda = kSpeedOfLight / sc.carrier_hz;

    {
        Reader a = root.child("array");
        sc.array.type = a.string("type", "ula", {"ula", "symmetric_ula", "positions"});
        if (sc.array.type == "positions")
        {
            const json &pos = a.raw("positions_m");
            if (!pos.is_array() || pos.empty())
                throw ScenarioError(a.field("positions_m"), "field 'array.positions_m' must be a non-empty array");
            json rec = json::array();
            for (const auto &p : pos)
            {
                if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
                    throw ScenarioError(a.field("positions_m"), "each position must be [x, y] in meters");
                sc.array.positions.emplace_back(p[0].get<double>(), p[1].get<double>());
                rec.push_back({p[0].get<double>(), p[1].get<double>()});
            }
            a.out()["positions_m"] = rec;
            sc.array.antennas = sc.array.positions.size();
        }
        else
        {
            if (sc.array.type == "symmetric_ula")
            {
                const auto m = a.unsigned_int("half_size");
                if (m < 1)
                    throw ScenarioError(a.field("half_size"), "symmetric ULA needs half_size >= 1");
                sc.array.antennas = 2 * m + 1;
            }
            else
            {
                sc.array.antennas = a.unsigned_int("antennas");
                if (sc.array.antennas < 1)
                    throw ScenarioError(a.field("antennas"), "array needs at least one antenna");
                const std::string ref = a.string("reference", "center", {"center", "first"});
                sc.array.reference = ref == "first" ? UlaReference::first : UlaReference::center;
            }
            const bool meters = a.has("spacing_m"), relative = a.has("spacing_wavelengths");
            if (meters == relative)
                throw ScenarioError(a.field("spacing_m"),
                                    "give exactly one of 'array.spacing_m' and 'array.spacing_wavelengths'");
            if (meters)
            {
                sc.array.spacing_m = a.number("spacing_m");
                check_positive(*sc.array.spacing_m, a.field("spacing_m"));
                a.maybe_number("spacing_wavelengths");
            }
            else
            {
                sc.array.spacing_wavelengths = a.number("spacing_wavelengths");
                check_positive(*sc.array.spacing_wavelengths, a.field("spacing_wavelengths"));
                a.maybe_number("spacing_m");
            }
        }
        a.finish();
    }

    {
        Reader s = root.child("steering");
        sc.steering.include_amplitude = s.boolean("include_amplitude", false);
        const std::string model = s.string("distance_model", "exact", {"exact", "fresnel", "planar"});
        sc.steering.distance = model == "fresnel" ? DistanceModel::fresnel
                                                  : (model == "planar" ? DistanceModel::planar : DistanceModel::exact);
        s.finish();
    }

    {
        const json &list = document.contains("targets") ? root.raw("targets") : json::array();
        if (!list.is_array())
            throw ScenarioError("targets", "field 'targets' must be an array");
        root.out()["targets"] = json::array();
        for (std::size_t k = 0; k < list.size(); ++k)
        {
            json rec;
            Reader t(list[k], "targets[" + std::to_string(k) + "]", rec);
            TargetSpec spec;
            spec.theta = t.number("theta_rad");
            spec.range = t.number("r_m");
            spec.gain = t.number("gain", 1.0);
            spec.phase = t.number("phase_rad", 0.0);
            spec.clock_offset = t.number("clock_offset_s", 0.0);
            spec.radial_velocity = t.number("vr_mps", 0.0);
            spec.transverse_velocity = t.number("vtheta_mps", 0.0);
            t.finish();
            if (!(spec.theta > 0.0 && spec.theta < kPi))
                throw ScenarioError(t.field("theta_rad"), "target direction must lie in (0, pi)");
            check_positive(spec.range, t.field("r_m"));
            sc.targets.push_back(spec);
            root.out()["targets"].push_back(rec);
        }
    }

    {
        Reader n = root.child("noise");
        if (n.has("snr_db") && n.has("variance"))
            throw ScenarioError("noise", "give at most one of 'noise.snr_db' and 'noise.variance'");
        if (n.has("variance"))
        {
            sc.noise_variance = n.number("variance");
            if (*sc.noise_variance < 0.0)
                throw ScenarioError("noise.variance", "noise variance must be non-negative");
            n.maybe_number("snr_db");
        }
        else
        {
            sc.snr_db = n.number("snr_db", 0.0);
            n.maybe_number("variance");
        }
        n.finish();
    }

    {
        Reader s = root.child("sampling");
        sc.samples = s.unsigned_int("samples", 200);
        if (sc.samples < 1)
            throw ScenarioError("sampling.samples", "need at least one sample");
        sc.cpi = s.number("cpi_s", 1e-3);
        check_positive(sc.cpi, "sampling.cpi_s");
        sc.sample_interval = s.number("sample_interval_s", sc.cpi / static_cast<double>(sc.samples));
        check_positive(sc.sample_interval, "sampling.sample_interval_s");
        sc.cpis = s.unsigned_int("cpis", 100);
        s.finish();
    }

    sc.source = root.string("source", "gaussian", {"gaussian", "unit_modulus"}) == "unit_modulus"
                    ? SourceModel::unit_modulus
                    : SourceModel::gaussian;

    // Geometry-derived defaults need the array.
    const ArraySetup setup = sc.setup();
    const double aperture = setup.geometry.aperture();
    const double fresnel = fresnel_region_start(aperture, lambda);
    const double fraunhofer = fraunhofer_distance(aperture, lambda);
    {
        Reader g = root.child("grid");
        sc.theta_grid = read_grid(g.child("theta"), "rad", {256, 0.1, kPi - 0.1, AxisSpacing::cosine});
        const double r_low = std::max(fresnel, 10.0 * lambda);
        sc.range_grid = read_grid(g.child("r"), "m", {256, r_low, std::max(fraunhofer, 2.0 * r_low), AxisSpacing::inverse});
        g.finish();
        if (!(sc.theta_grid.lower > 0.0 && sc.theta_grid.upper < kPi))
            throw ScenarioError("grid.theta", "direction grid must lie inside (0, pi)");
        if (!(sc.range_grid.lower > 0.0))
            throw ScenarioError("grid.r", "range grid must be positive");
    }

    switch (sc.command)
    {
    case Command::simulate:
        break;
    case Command::spectrum: {
        Reader s = root.child("spectrum");
        sc.spectrum.methods = s.strings("methods", {"dml", "music"}, {"dml", "music"});
        sc.spectrum.num_targets = s.maybe_unsigned("num_targets");
        sc.spectrum.ratio = s.number("ratio", 10.0);
        sc.spectrum.music_form = s.string("music_form", "noise", {"noise", "signal"});
        sc.spectrum.refine = s.boolean("refine", false);
        s.finish();
        if (sc.spectrum.num_targets && *sc.spectrum.num_targets >= sc.array.antennas)
            throw IdentifiabilityError("spectrum.num_targets must be smaller than the antenna count");
        break;
    }
    case Command::modified_music: {
        Reader s = root.child("modified_music");
        sc.modified_music.windows = s.unsigned_int("windows", sc.array.antennas / 5);
        sc.modified_music.num_targets = s.maybe_unsigned("num_targets");
        s.finish();
        check_modified_music(setup, {sc.modified_music.windows, sc.theta_grid.axis(), sc.range_grid.axis()});
        break;
    }
    case Command::track: {
        Reader s = root.child("track");
        const auto pn = s.numbers("process_noise", {0.0, 0.0, 0.01, 0.01});
        if (pn.size() != 4 || std::any_of(pn.begin(), pn.end(), [](double v) { return v < 0.0; }))
            throw ScenarioError("track.process_noise", "process noise needs four non-negative variances");
        std::copy(pn.begin(), pn.end(), sc.track.process_noise.begin());
        sc.track.source_knowledge = s.string("source_knowledge", "injected", {"known", "injected", "estimated"});
        sc.track.source_error_db = s.number("source_error_db", -3.0);
        sc.track.init_range_std = s.number("init_range_std_m", 0.05);
        sc.track.init_theta_std = s.number("init_theta_std_rad", 0.01);
        sc.track.init_velocity_std = s.number("init_velocity_std_mps", 5.0);
        sc.track.gain = s.string("gain", "closed_form", {"closed_form", "gradient"});
        sc.track.jacobian = s.string("jacobian", "analytic", {"analytic", "finite_difference"});
        sc.track.reinitialize = s.boolean("reinitialize", true);
        s.finish();
        if (sc.targets.size() != 1)
            throw ScenarioError("targets", "track needs exactly one target");
        if (sc.cpis < 1)
            throw ScenarioError("sampling.cpis", "track needs at least one CPI");
        break;
    }
    case Command::crb: {
        Reader s = root.child("crb");
        sc.crb.thetas = s.numbers("thetas_rad", {kPi / 2});
        std::vector<double> ranges;
        for (int i = 0; i < 10; ++i)
            ranges.push_back(2.0 * fresnel * std::pow(fraunhofer / (4.0 * fresnel), i / 9.0));
        sc.crb.ranges = s.numbers("ranges_m", ranges);
        sc.crb.numerical = s.boolean("numerical", true);
        s.finish();
        if (sc.array.type == "positions")
            throw ValidityError("geometry", "closed-form CRBs need a uniform linear array");
        for (double t : sc.crb.thetas)
            if (!(t > 0.0 && t < kPi))
                throw ScenarioError("crb.thetas_rad", "directions must lie in (0, pi)");
        for (double r : sc.crb.ranges)
            check_positive(r, "crb.ranges_m");
        break;
    }
    case Command::af: {
        Reader s = root.child("af");
        sc.af.theta0 = s.number("theta0_rad", kPi / 2);
        const double dflt_r0 = sc.targets.empty() ? 0.5 * threshold_distance(sc.array.antennas,
                                                                              aperture / std::max<double>(1.0, static_cast<double>(sc.array.antennas - 1)),
                                                                              lambda, kPi / 2)
                                                  : sc.targets[0].range;
        sc.af.r0 = s.number("r0_m", dflt_r0);
        check_positive(sc.af.r0, "af.r0_m");
        sc.af.range = read_grid(s.child("r"), "m", {1001, sc.af.r0 / 3.0, 20.0 * sc.af.r0, AxisSpacing::inverse});
        sc.af.direction_points = s.unsigned_int("direction_points", 401);
        s.finish();
        if (!(sc.af.theta0 > 0.0 && sc.af.theta0 < kPi))
            throw ScenarioError("af.theta0_rad", "reference direction must lie in (0, pi)");
        if (sc.array.type == "positions")
            throw ValidityError("geometry", "the resolution analysis needs a uniform linear array");
        break;
    }
    case Command::monte_carlo: {
        Reader s = root.child("monte_carlo");
        sc.monte_carlo.trials = s.unsigned_int("trials", 200);
        sc.monte_carlo.axis = s.string("axis", "snr_db", {"snr_db", "samples", "r_m"});
        sc.monte_carlo.values = s.numbers("values", {}, true);
        sc.monte_carlo.estimator = s.string("estimator", "music", {"music", "dml"});
        sc.monte_carlo.refine = s.boolean("refine", true);
        s.finish();
        if (sc.monte_carlo.trials < 1)
            throw ScenarioError("monte_carlo.trials", "need at least one trial");
        if (sc.monte_carlo.values.empty())
            throw ScenarioError("monte_carlo.values", "sweep needs at least one value");
        if (sc.targets.empty())
            throw ScenarioError("targets", "monte-carlo needs a target");
        break;
    }
    }

    // Sections for other commands may be present; they are validated by
    // their own command and carried through unchanged.
    for (const char *section : {"spectrum", "modified_music", "track", "crb", "af", "monte_carlo"})
        if (document.contains(section) && !root.out().contains(section))
            root.out()[section] = document.at(section);
    {
        json ignored;
        std::vector<std::string> known = {"command", "seed", "waveform", "array", "steering", "targets", "noise",
                                          "sampling", "source", "grid", "spectrum", "modified_music", "track",
                                          "crb", "af", "monte_carlo"};
        for (auto it = document.begin(); it != document.end(); ++it)
            if (std::find(known.begin(), known.end(), it.key()) == known.end())
                throw ScenarioError(it.key(), "unknown field '" + it.key() + "'");
    }

    if (sc.targets.size() >= sc.array.antennas)
        throw IdentifiabilityError("need fewer targets than antennas");

    sc.resolved = std::move(resolved);
    return sc;
}

json manifest(const Scenario &scenario)
{
    json m;
    m["toolkit_version"] = kToolkitVersion;
    m["command"] = command_name(scenario.command);
    m["snr_definition"] = kSnrDefinition;
    m["scenario"] = scenario.resolved;
    return m;
}

// ---- parallel map ------------------------------------------------------------

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)> &fn)
{
    if (count == 0)
        return;
    if (workers == 0)
        workers = std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, count);
    if (workers == 1)
    {
        for (std::size_t i = 0; i < count; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++)
            {
                try
                {
                    fn(i);
                }
                catch (...)
                {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure)
                        failure = std::current_exception();
                    next = count;
                }
            }
        });
    for (auto &t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

// ---- matching and contrast -----------------------------------------------------

namespace
{
double fractional_index(const GridAxis &axis, double value)
{
    if (axis.size() < 2)
        return 0.0;
    const double c0 = axis.coordinate(axis.values.front());
    const double c1 = axis.coordinate(axis.values.back());
    return (axis.coordinate(value) - c0) / (c1 - c0) * static_cast<double>(axis.size() - 1);
}

double cells_between(const GridAxis &axis, double a, double b)
{
    const double step = axis.step();
    if (!(step > 0.0))
        return 0.0;
    return std::abs(axis.coordinate(a) - axis.coordinate(b)) / step;
}

void assign(std::size_t peak, const std::vector<std::vector<double>> &cost, std::vector<int> &used,
            std::vector<std::size_t> &current, double total, double &best_total, std::vector<std::size_t> &best)
{
    if (peak == cost.size())
    {
        if (total < best_total)
        {
            best_total = total;
            best = current;
        }
        return;
    }
    for (std::size_t t = 0; t < used.size(); ++t)
    {
        if (used[t])
            continue;
        const double next = total + cost[peak][t];
        if (next >= best_total)
            continue;
        used[t] = 1;
        current[peak] = t;
        assign(peak + 1, cost, used, current, next, best_total, best);
        used[t] = 0;
    }
}
} // namespace

std::vector<MatchedEstimate> match_peaks(const PeakSet &peaks, std::span<const TargetSpec> truths,
                                         const SearchGrid &grid)
{
    const std::size_t k = std::min(peaks.peaks.size(), truths.size());
    if (k == 0)
        return {};
    std::vector<std::vector<double>> cost(k, std::vector<double>(truths.size()));
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t t = 0; t < truths.size(); ++t)
            cost[p][t] = std::hypot(cells_between(grid.theta, peaks.peaks[p].theta, truths[t].theta),
                                    cells_between(grid.range, peaks.peaks[p].range, truths[t].range));
    std::vector<int> used(truths.size(), 0);
    std::vector<std::size_t> current(k), best(k);
    double best_total = std::numeric_limits<double>::infinity();
    assign(0, cost, used, current, 0.0, best_total, best);

    std::vector<MatchedEstimate> out;
    for (std::size_t p = 0; p < k; ++p)
    {
        const auto &truth = truths[best[p]];
        out.push_back({best[p], peaks.peaks[p], cells_between(grid.theta, peaks.peaks[p].theta, truth.theta),
                       cells_between(grid.range, peaks.peaks[p].range, truth.range)});
    }
    std::sort(out.begin(), out.end(), [](const auto &a, const auto &b) { return a.target < b.target; });
    return out;
}

std::pair<std::size_t, std::size_t> closest_pair(std::span<const TargetSpec> truths, const SearchGrid &grid)
{
    std::pair<std::size_t, std::size_t> best{0, 1};
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < truths.size(); ++a)
        for (std::size_t b = a + 1; b < truths.size(); ++b)
        {
            const double d = std::hypot(cells_between(grid.theta, truths[a].theta, truths[b].theta),
                                        cells_between(grid.range, truths[a].range, truths[b].range));
            if (d < best_d)
            {
                best_d = d;
                best = {a, b};
            }
        }
    return best;
}

double pair_contrast(const SpectrumGrid &spectrum, const TargetSpec &a, const TargetSpec &b)
{
    const auto rows = spectrum.values.rows();
    const auto cols = spectrum.values.cols();
    auto clamp_index = [](double f, Eigen::Index n) {
        return std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::llround(f)), 0, n - 1);
    };
    auto local_max = [&](const TargetSpec &t) {
        const auto i0 = clamp_index(fractional_index(spectrum.theta, t.theta), rows);
        const auto j0 = clamp_index(fractional_index(spectrum.range, t.range), cols);
        double best = -std::numeric_limits<double>::infinity();
        for (Eigen::Index i = std::max<Eigen::Index>(0, i0 - 1); i <= std::min(rows - 1, i0 + 1); ++i)
            for (Eigen::Index j = std::max<Eigen::Index>(0, j0 - 1); j <= std::min(cols - 1, j0 + 1); ++j)
                best = std::max(best, spectrum.values(i, j));
        return best;
    };
    auto bilinear = [&](double fi, double fj) {
        fi = std::clamp(fi, 0.0, static_cast<double>(rows - 1));
        fj = std::clamp(fj, 0.0, static_cast<double>(cols - 1));
        const auto i = std::min<Eigen::Index>(static_cast<Eigen::Index>(fi), std::max<Eigen::Index>(rows - 2, 0));
        const auto j = std::min<Eigen::Index>(static_cast<Eigen::Index>(fj), std::max<Eigen::Index>(cols - 2, 0));
        const double ti = rows > 1 ? fi - static_cast<double>(i) : 0.0;
        const double tj = cols > 1 ? fj - static_cast<double>(j) : 0.0;
        const auto i1 = std::min(i + 1, rows - 1), j1 = std::min(j + 1, cols - 1);
        return (1 - ti) * (1 - tj) * spectrum.values(i, j) + ti * (1 - tj) * spectrum.values(i1, j) +
               (1 - ti) * tj * spectrum.values(i, j1) + ti * tj * spectrum.values(i1, j1);
    };
    const double ai = fractional_index(spectrum.theta, a.theta), aj = fractional_index(spectrum.range, a.range);
    const double bi = fractional_index(spectrum.theta, b.theta), bj = fractional_index(spectrum.range, b.range);
    double floor = std::numeric_limits<double>::infinity();
    constexpr int samples = 129;
    for (int s = 0; s < samples; ++s)
    {
        const double t = static_cast<double>(s) / (samples - 1);
        floor = std::min(floor, bilinear(ai + t * (bi - ai), aj + t * (bj - aj)));
    }
    const double peak = std::min(local_max(a), local_max(b));
    return floor > 0.0 ? peak / floor : std::numeric_limits<double>::infinity();
}

// ---- kernels -------------------------------------------------------------------

namespace
{
PeakExclusion exclusion_for(const ArraySetup &setup)
{
    const std::size_t n = setup.size();
    const double d = n > 1 ? setup.geometry.aperture() / static_cast<double>(n - 1) : setup.wavelength() / 2;
    return PeakExclusion::from_resolution(n, d, setup.wavelength());
}

double projection_objective(const CMatrix &x, const ArraySetup &setup, double theta, double r)
{
    const CVector a = setup.steering_vector(theta, r);
    return (a.adjoint() * x).squaredNorm() / a.squaredNorm();
}

std::size_t argmax_cell(const RMatrix &values, std::size_t &col)
{
    Eigen::Index i = 0, j = 0;
    values.maxCoeff(&i, &j);
    col = static_cast<std::size_t>(j);
    return static_cast<std::size_t>(i);
}
} // namespace

SpectrumOutcome run_spectrum(const Scenario &sc, std::uint64_t seed)
{
    const ArraySetup setup = sc.setup();
    const auto targets = sc.fixed_targets();
    const auto snap = synthesize_fixed(setup, targets, sc.source, sc.samples, sc.noise(), seed);
    const auto cov = sample_covariance(snap.data);

    SpectrumOutcome out;
    Eigen::SelfAdjointEigenSolver<CMatrix> eig(cov.matrix, Eigen::EigenvaluesOnly);
    out.eigenvalues = eig.eigenvalues().reverse();
    out.num_targets = sc.spectrum.num_targets ? *sc.spectrum.num_targets
                                              : estimate_num_targets(out.eigenvalues, sc.spectrum.ratio);
    if (out.num_targets == 0)
        throw NoPeak("no eigenvalue exceeds the detection threshold");
    const auto dec = eig_decompose(cov.matrix, out.num_targets);
    const SearchGrid grid = sc.grid();
    const PeakExclusion exclusion = exclusion_for(setup);

    for (const auto &method : sc.spectrum.methods)
    {
        SpectrumMethodResult res;
        res.method = method;
        CMatrix basis;
        if (method == "dml")
            res.spectrum = spectrum_single(snap.data, setup, grid);
        else if (sc.spectrum.music_form == "signal")
        {
            res.spectrum = spectrum_single(dec.signal_basis, setup, grid);
            res.spectrum.kind = "music-signal";
        }
        else
            res.spectrum = music_spectrum_noise(dec.noise_basis, setup, grid);
        try
        {
            res.peaks = find_peaks(res.spectrum, out.num_targets, exclusion);
        }
        catch (const InsufficientPeaks &e)
        {
            res.peaks = e.found();
        }
        if (sc.spectrum.refine)
        {
            const CMatrix &x = method == "dml" ? snap.data : dec.signal_basis;
            for (const auto &p : res.peaks.peaks)
                res.refined.push_back(refine_peak(
                    [&](double th, double r) { return projection_objective(x, setup, th, r); }, {p.theta, p.range},
                    grid));
        }
        res.matches = match_peaks(res.peaks, sc.targets, grid);
        if (sc.targets.size() >= 2)
        {
            const auto [a, b] = closest_pair(sc.targets, grid);
            res.contrast = pair_contrast(res.spectrum, sc.targets[a], sc.targets[b]);
        }
        out.methods.push_back(std::move(res));
    }
    return out;
}

ModifiedMusicOutcome run_modified_music(const Scenario &sc, std::uint64_t seed)
{
    const ArraySetup setup = sc.setup();
    ModifiedMusicOutcome out;
    out.grid = sc.grid();
    ModifiedMusicConfig config{sc.modified_music.windows, out.grid.theta, out.grid.range};
    check_modified_music(setup, config);
    const auto snap = synthesize_fixed(setup, sc.fixed_targets(), sc.source, sc.samples, sc.noise(), seed);
    out.num_targets = sc.modified_music.num_targets ? *sc.modified_music.num_targets : sc.targets.size();
    if (out.num_targets == 0)
        throw NoPeak("modified MUSIC needs at least one target");
    out.result = modified_music(snap.data, out.num_targets, setup, config);
    out.matches = match_peaks(out.result.estimates, sc.targets, out.grid);
    return out;
}

Location estimate_single(const Scenario &sc, const CMatrix &snapshots, const std::string &estimator, bool refine)
{
    const ArraySetup setup = sc.setup();
    const SearchGrid grid = sc.grid();
    CMatrix x;
    SpectrumGrid spectrum;
    if (estimator == "dml")
    {
        x = snapshots;
        spectrum = spectrum_single(snapshots, setup, grid);
    }
    else
    {
        const auto dec = eig_decompose(sample_covariance(snapshots).matrix, 1);
        x = dec.signal_basis;
        spectrum = music_spectrum_noise(dec.noise_basis, setup, grid);
    }
    std::size_t j = 0;
    const std::size_t i = argmax_cell(spectrum.values, j);
    Location loc{grid.theta.values[i], grid.range.values[j]};
    if (refine)
        loc = refine_peak([&](double th, double r) { return projection_objective(x, setup, th, r); }, loc, grid);
    return loc;
}

TrackOutcome run_track(const Scenario &sc, std::uint64_t seed)
{
    const ArraySetup setup = sc.setup();
    const NoiseModel noise = sc.noise();
    const TargetSpec &target = sc.targets[0];
    const double cpi = sc.cpi;

    RandomStream process(seed, 101), meas(seed, 102), src(seed, 103), src_err(seed, 104);

    TrackOutcome out;
    State4 q = to_state(target.motion());
    out.truth.push_back({q, Matrix4::Zero(), 0});
    for (std::size_t i = 1; i <= sc.cpis; ++i)
    {
        q = state_transition(q, cpi);
        for (int c = 0; c < 4; ++c)
            q[c] += std::sqrt(sc.track.process_noise[static_cast<std::size_t>(c)]) * process.normal();
        if (!(q[1] > 0.0 && q[1] < kPi))
            throw InvalidState("simulated trajectory left the half plane");
        out.truth.push_back({q, Matrix4::Zero(), i});
    }

    const double amplitude = target.gain;
    std::vector<CVector> ys;
    std::vector<cplx> sources;
    for (std::size_t i = 0; i <= sc.cpis; ++i)
    {
        const cplx s = amplitude * src.unit_phase();
        CVector y = observation_fn(out.truth[i].q, setup, cpi) * s;
        if (noise.enabled())
            for (Eigen::Index n = 0; n < y.size(); ++n)
                y[n] += meas.complex_normal(noise.variance);
        ys.push_back(std::move(y));
        sources.push_back(s);
    }

    const SearchGrid grid = sc.grid();
    auto fixed_estimate = [&](const CVector &y, std::size_t index) {
        const SpectrumGrid spectrum = spectrum_single(y, setup, grid);
        std::size_t j = 0;
        const std::size_t i = argmax_cell(spectrum.values, j);
        const CMatrix x = y;
        const Location loc = refine_peak([&](double th, double r) { return projection_objective(x, setup, th, r); },
                                         {grid.theta.values[i], grid.range.values[j]}, grid);
        FilterState s;
        s.q = State4(loc.range, loc.theta, 0.0, 0.0);
        s.covariance.diagonal() << std::pow(sc.track.init_range_std, 2), std::pow(sc.track.init_theta_std, 2),
            std::pow(sc.track.init_velocity_std, 2), std::pow(sc.track.init_velocity_std, 2);
        s.cpi = index;
        return s;
    };

    out.initial = fixed_estimate(ys[0], 0);

    std::vector<Measurement> measurements;
    for (std::size_t i = 1; i <= sc.cpis; ++i)
    {
        Measurement m{ys[i], noise.variance, std::nullopt};
        if (sc.track.source_knowledge == "known")
            m.source = sources[i];
        else if (sc.track.source_knowledge == "injected")
            m.source = sources[i] + src_err.complex_normal(std::norm(sources[i]) *
                                                           std::pow(10.0, sc.track.source_error_db / 10.0));
        measurements.push_back(std::move(m));
    }

    EkfConfig config;
    config.cpi = cpi;
    config.gain = sc.track.gain == "gradient" ? GainMethod::gradient : GainMethod::closed_form;
    config.jacobian =
        sc.track.jacobian == "finite_difference" ? JacobianMethod::finite_difference : JacobianMethod::analytic;
    ProcessNoise pn;
    pn.covariance.diagonal() << sc.track.process_noise[0], sc.track.process_noise[1], sc.track.process_noise[2],
        sc.track.process_noise[3];

    Reinitializer reinit;
    if (sc.track.reinitialize)
        reinit = [&](std::size_t index, const FilterDivergence &) { return fixed_estimate(ys[index + 1], index + 1); };
    out.trajectory = track(measurements, out.initial, pn, setup, config, reinit);

    for (std::size_t i = 0; i < out.trajectory.states.size(); ++i)
    {
        const MotionState est = out.trajectory.states[i].motion();
        const MotionState tru = out.truth[i + 1].motion();
        out.location_error.push_back((est.target.location() - tru.target.location()).norm());
        out.velocity_error.push_back((est.velocity() - tru.velocity()).norm());
    }
    return out;
}

std::vector<MonteCarloPoint> run_monte_carlo(const Scenario &sc, std::size_t workers)
{
    const auto &mc = sc.monte_carlo;
    const std::size_t points = mc.values.size();
    std::vector<Scenario> variants;
    for (double v : mc.values)
    {
        Scenario s = sc;
        if (mc.axis == "snr_db")
        {
            s.snr_db = v;
            s.noise_variance.reset();
        }
        else if (mc.axis == "samples")
        {
            if (!(v >= 1.0) || v != std::floor(v))
                throw ScenarioError("monte_carlo.values", "sample counts must be positive integers");
            s.samples = static_cast<std::size_t>(v);
        }
        else
        {
            if (!(v > 0.0))
                throw ScenarioError("monte_carlo.values", "ranges must be positive");
            s.targets[0].range = v;
        }
        s.targets.resize(1);
        variants.push_back(std::move(s));
    }

    std::vector<MonteCarloPoint> out(points);
    std::vector<double> theta_err(points * mc.trials), range_err(points * mc.trials);
    parallel_for(points * mc.trials, workers, [&](std::size_t job) {
        const std::size_t p = job / mc.trials, t = job % mc.trials;
        const Scenario &s = variants[p];
        // Common random numbers: the trial seed does not depend on the sweep point.
        const std::uint64_t trial_seed = derive_seed(sc.seed, t);
        const auto snap = synthesize_fixed(s.setup(), s.fixed_targets(), s.source, s.samples, s.noise(), trial_seed);
        const Location est = estimate_single(s, snap.data, mc.estimator, mc.refine);
        theta_err[job] = est.theta - s.targets[0].theta;
        range_err[job] = est.range - s.targets[0].range;
    });

    for (std::size_t p = 0; p < points; ++p)
    {
        const Scenario &s = variants[p];
        MonteCarloPoint &pt = out[p];
        pt.value = mc.values[p];
        pt.theta_errors.assign(theta_err.begin() + static_cast<std::ptrdiff_t>(p * mc.trials),
                               theta_err.begin() + static_cast<std::ptrdiff_t>((p + 1) * mc.trials));
        pt.range_errors.assign(range_err.begin() + static_cast<std::ptrdiff_t>(p * mc.trials),
                               range_err.begin() + static_cast<std::ptrdiff_t>((p + 1) * mc.trials));
        double st = 0.0, sr = 0.0;
        for (std::size_t t = 0; t < mc.trials; ++t)
        {
            st += pt.theta_errors[t] * pt.theta_errors[t];
            sr += pt.range_errors[t] * pt.range_errors[t];
        }
        pt.rmse_theta = std::sqrt(st / static_cast<double>(mc.trials));
        pt.rmse_r = std::sqrt(sr / static_cast<double>(mc.trials));

        const ArraySetup setup = s.setup();
        const double snr = s.snr_linear() * std::norm(s.targets[0].gain);
        const double theta = s.targets[0].theta, r = s.targets[0].range;
        if (s.array.type != "positions" && setup.size() >= 3)
        {
            const double d = setup.geometry.aperture() / static_cast<double>(setup.size() - 1);
            const CrbInputs in{setup.size(), d, setup.wavelength(), s.samples, snr};
            pt.crb_theta = crb_theta(in, theta);
            pt.crb_r = crb_r(in, theta, r);
        }
        else
        {
            pt.crb_theta = pt.crb_r = std::numeric_limits<double>::quiet_NaN();
        }
        const auto fim = fim_numerical(fixed_response_model(setup, s.samples), RVector::Map(std::array<double, 2>{theta, r}.data(), 2), snr);
        const RMatrix inv = fim.inverse();
        pt.fim_crb_theta = inv(0, 0);
        pt.fim_crb_r = inv(1, 1);
    }
    return out;
}

// ---- run ---------------------------------------------------------------------------

namespace
{
json location_json(double theta, double r) { return {{"theta_rad", theta}, {"r_m", r}}; }

json sidecar(const Scenario &sc, json meta)
{
    meta["snr_definition"] = kSnrDefinition;
    meta["seed"] = sc.seed;
    meta["toolkit_version"] = kToolkitVersion;
    return meta;
}

void emit_spectrum(const Scenario &sc, const SpectrumGrid &spectrum, const std::filesystem::path &dir,
                   const std::string &stem, RunSummary &summary)
{
    io::spectrum_table(spectrum).write(dir / (stem + ".csv"));
    io::write_json(dir / (stem + ".json"), sidecar(sc, io::spectrum_metadata(spectrum)));
    summary.files.push_back(stem + ".csv");
    summary.files.push_back(stem + ".json");
}

json matches_json(const std::vector<MatchedEstimate> &matches)
{
    json arr = json::array();
    for (const auto &m : matches)
        arr.push_back({{"target", m.target},
                       {"theta_rad", m.peak.theta},
                       {"r_m", m.peak.range},
                       {"value", m.peak.value},
                       {"theta_cells", m.theta_cells},
                       {"r_cells", m.range_cells}});
    return arr;
}
} // namespace

RunSummary run(const Scenario &sc, const std::filesystem::path &out, std::size_t workers)
{
    const auto start = std::chrono::steady_clock::now();
    RunSummary summary;
    summary.directory = out;
    std::filesystem::create_directories(out);
    json metrics;
    metrics["command"] = command_name(sc.command);

    switch (sc.command)
    {
    case Command::simulate: {
        const ArraySetup setup = sc.setup();
        const bool moving = std::any_of(sc.targets.begin(), sc.targets.end(), [](const TargetSpec &t) {
            return t.radial_velocity != 0.0 || t.transverse_velocity != 0.0;
        });
        const auto snap = moving ? synthesize_moving(setup, sc.moving_targets(), sc.source, sc.samples,
                                                     sc.sample_interval, sc.noise(), sc.seed)
                                 : synthesize_fixed(setup, sc.fixed_targets(), sc.source, sc.samples, sc.noise(),
                                                    sc.seed);
        io::CsvTable table({"sample", "antenna", "re", "im"});
        for (Eigen::Index l = 0; l < snap.data.cols(); ++l)
            for (Eigen::Index n = 0; n < snap.data.rows(); ++n)
                table.add_row(std::vector<std::string>{std::to_string(l + 1), std::to_string(n),
                                                       io::format_double(snap.data(n, l).real()),
                                                       io::format_double(snap.data(n, l).imag())});
        table.write(out / "snapshots.csv");
        io::write_json(out / "snapshots.json",
                       sidecar(sc, {{"antennas", snap.antennas()}, {"samples", snap.samples()},
                                    {"sample_interval_s", moving ? sc.sample_interval : 0.0}, {"moving", moving}}));
        summary.files = {"snapshots.csv", "snapshots.json"};
        metrics["antennas"] = snap.antennas();
        metrics["samples"] = snap.samples();
        metrics["mean_power"] = snap.data.squaredNorm() / static_cast<double>(snap.data.size());
        metrics["noise_variance"] = sc.noise().variance;
        break;
    }
    case Command::spectrum: {
        const auto res = run_spectrum(sc, sc.seed);
        metrics["num_targets"] = res.num_targets;
        metrics["eigenvalues"] = std::vector<double>(res.eigenvalues.data(),
                                                     res.eigenvalues.data() + std::min<Eigen::Index>(res.eigenvalues.size(), 16));
        for (const auto &m : res.methods)
        {
            emit_spectrum(sc, m.spectrum, out, "spectrum_" + m.method, summary);
            json entry;
            entry["peaks"] = io::peaks_json(m.peaks);
            entry["matches"] = matches_json(m.matches);
            if (!m.refined.empty())
            {
                entry["refined"] = json::array();
                for (const auto &l : m.refined)
                    entry["refined"].push_back(location_json(l.theta, l.range));
            }
            entry["closest_pair_contrast"] = m.contrast;
            metrics["methods"][m.method] = entry;
        }
        break;
    }
    case Command::modified_music: {
        const auto res = run_modified_music(sc, sc.seed);
        emit_spectrum(sc, res.result.direction.spectrum, out, "spectrum_direction", summary);
        for (std::size_t k = 0; k < res.result.distances.size(); ++k)
            emit_spectrum(sc, res.result.distances[k].spectrum, out, "spectrum_distance_" + std::to_string(k),
                          summary);
        metrics["num_targets"] = res.num_targets;
        metrics["windows"] = res.result.windows;
        metrics["window_size"] = res.result.window_size;
        metrics["noise_floor"] = res.result.noise_floor;
        metrics["direction_multiply_adds"] = res.result.direction.multiply_adds;
        metrics["estimates"] = io::peaks_json(res.result.estimates);
        metrics["matches"] = matches_json(res.matches);
        break;
    }
    case Command::track: {
        const auto res = run_track(sc, sc.seed);
        io::trajectory_table(res.trajectory.states).write(out / "trajectory.csv");
        io::trajectory_table(res.truth).write(out / "truth.csv");
        io::write_json(out / "trajectory.json",
                       sidecar(sc, {{"cpi_s", sc.cpi}, {"cpis", sc.cpis}, {"state", {"r_m", "theta_rad", "vr_mps", "vtheta_mps"}},
                                    {"source_knowledge", sc.track.source_knowledge}}));
        summary.files = {"trajectory.csv", "truth.csv", "trajectory.json"};
        io::CsvTable errors({"cpi_index", "location_error_m", "velocity_error_mps", "nis"});
        for (std::size_t i = 0; i < res.location_error.size(); ++i)
            errors.add_row(std::vector<double>{static_cast<double>(i + 1), res.location_error[i], res.velocity_error[i],
                                               res.trajectory.nis[i]});
        errors.write(out / "errors.csv");
        summary.files.push_back("errors.csv");
        metrics["initial"] = {{"r_m", res.initial.q[0]}, {"theta_rad", res.initial.q[1]}};
        metrics["reinitializations"] = res.trajectory.reinitializations;
        metrics["final_location_error_m"] = res.location_error.back();
        metrics["final_velocity_error_mps"] = res.velocity_error.back();
        double nis = 0.0;
        std::size_t count = 0;
        for (double v : res.trajectory.nis)
            if (std::isfinite(v))
            {
                nis += v;
                ++count;
            }
        metrics["mean_nis"] = count ? nis / static_cast<double>(count) : 0.0;
        metrics["expected_nis"] = 2.0 * static_cast<double>(sc.setup().size());
        break;
    }
    case Command::crb: {
        const ArraySetup setup = sc.setup();
        const std::size_t n = setup.size();
        const double d = setup.geometry.aperture() / static_cast<double>(n - 1);
        const CrbInputs in{n, d, setup.wavelength(), sc.samples, sc.snr_linear()};
        // The closed forms assume this geometry and model.
        const ArraySetup fresnel{ArrayGeometry::ula(n, d, UlaReference::first), setup.waveform,
                                 {false, DistanceModel::fresnel}};
        const ResponseModel model = fixed_response_model(fresnel, sc.samples);
        io::CsvTable table({"theta_rad", "r_m", "crb_theta_rad2", "crb_r_m2", "fim_crb_theta_rad2", "fim_crb_r_m2"});
        double worst = 0.0;
        for (double theta : sc.crb.thetas)
            for (double r : sc.crb.ranges)
            {
                const double ct = crb_theta(in, theta), cr = crb_r(in, theta, r);
                double ft = std::numeric_limits<double>::quiet_NaN(), fr = ft;
                if (sc.crb.numerical)
                {
                    const RVector point = (RVector(2) << theta, r).finished();
                    const RMatrix inv = fim_numerical(model, point, sc.snr_linear()).inverse();
                    ft = inv(0, 0);
                    fr = inv(1, 1);
                    worst = std::max({worst, std::abs(ft / ct - 1.0), std::abs(fr / cr - 1.0)});
                }
                table.add_row(std::vector<double>{theta, r, ct, cr, ft, fr});
            }
        table.write(out / "crb.csv");
        io::write_json(out / "crb.json",
                       sidecar(sc, {{"antennas", n}, {"spacing_m", d}, {"wavelength_m", setup.wavelength()},
                                    {"samples", sc.samples}, {"snr_linear", sc.snr_linear()},
                                    {"numerical_model", "fresnel, unit amplitude, first-antenna reference, unknown source"}}));
        summary.files = {"crb.csv", "crb.json"};
        metrics["points"] = sc.crb.thetas.size() * sc.crb.ranges.size();
        if (sc.crb.numerical)
            metrics["max_relative_deviation"] = worst;
        break;
    }
    case Command::af: {
        const ArraySetup setup = sc.setup();
        const std::size_t n = setup.size();
        const double d = setup.geometry.aperture() / static_cast<double>(n - 1);
        const double lambda = setup.wavelength();
        const ArraySetup unit{setup.geometry, setup.waveform, {false, DistanceModel::exact}};
        const double theta0 = sc.af.theta0, r0 = sc.af.r0;
        const double v0 = std::cos(theta0);
        const double hw = hpmw_direction(n, d, lambda);

        io::CsvTable direction({"vartheta", "lambda1_abs", "af_abs"});
        for (std::size_t i = 0; i < sc.af.direction_points; ++i)
        {
            const double v = std::clamp(v0 - 4.0 * hw + 8.0 * hw * static_cast<double>(i) /
                                                             static_cast<double>(std::max<std::size_t>(sc.af.direction_points - 1, 1)),
                                        -1.0 + 1e-12, 1.0 - 1e-12);
            const double theta = std::acos(v);
            const double r = r0 * std::pow(std::sin(theta), 2) / std::pow(std::sin(theta0), 2);
            direction.add_row(std::vector<double>{v, std::abs(lambda1(v, v0, n, d, lambda)),
                                                  std::abs(ambiguity(theta, r, theta0, r0, unit))});
        }
        direction.write(out / "af_direction.csv");

        io::CsvTable distance({"r_m", "eta", "lambda2_abs", "af_abs"});
        const GridAxis axis = sc.af.range.axis();
        for (double r : axis.values)
            distance.add_row(std::vector<double>{r, fresnel_argument(r, theta0, r0, n, d, lambda),
                                                 std::abs(lambda2(r, theta0, r0, n, d, lambda)),
                                                 std::abs(ambiguity(theta0, r, theta0, r0, unit))});
        distance.write(out / "af_distance.csv");
        io::write_json(out / "af.json", sidecar(sc, {{"theta0_rad", theta0}, {"r0_m", r0}, {"antennas", n},
                                                     {"spacing_m", d}, {"r", io::axis_metadata(axis)}}));
        summary.files = {"af_direction.csv", "af_distance.csv", "af.json"};

        const auto rep = resolution(theta0, r0, n, d, lambda);
        const auto numeric = half_power_distance_numeric(r0, theta0, n, d, lambda);
        metrics["hpmw_direction"] = rep.direction_halfwidth;
        metrics["hpmw_direction_numeric"] = half_power_direction_numeric(n, d, lambda);
        metrics["threshold_distance_m"] = rep.threshold;
        metrics["fraunhofer_distance_m"] = rep.fraunhofer;
        metrics["hpmw_distance"] = {{"delta_lower_m", rep.distance.lower},
                                    {"delta_upper_m", rep.distance.upper_infinite() ? json(nullptr) : json(rep.distance.upper)},
                                    {"upper_infinite", rep.distance.upper_infinite()}};
        metrics["hpmw_distance_numeric"] = {
            {"delta_lower_m", numeric.lower},
            {"delta_upper_m", numeric.upper_infinite() ? json(nullptr) : json(numeric.upper)},
            {"upper_infinite", numeric.upper_infinite()}};
        metrics["half_power_eta"] = half_power_eta();
        break;
    }
    case Command::monte_carlo: {
        const auto points = run_monte_carlo(sc, workers);
        io::CsvTable table({sc.monte_carlo.axis, "rmse_theta_rad", "rmse_r_m", "crb_theta_rad2", "crb_r_m2",
                            "fim_crb_theta_rad2", "fim_crb_r_m2"});
        json arr = json::array();
        for (const auto &p : points)
        {
            table.add_row(std::vector<double>{p.value, p.rmse_theta, p.rmse_r, p.crb_theta, p.crb_r, p.fim_crb_theta,
                                              p.fim_crb_r});
            arr.push_back({{"value", p.value},
                           {"rmse_theta_rad", p.rmse_theta},
                           {"rmse_r_m", p.rmse_r},
                           {"crb_theta_rad2", p.crb_theta},
                           {"crb_r_m2", p.crb_r},
                           {"fim_crb_theta_rad2", p.fim_crb_theta},
                           {"fim_crb_r_m2", p.fim_crb_r}});
        }
        table.write(out / "monte_carlo.csv");
        io::write_json(out / "monte_carlo.json",
                       sidecar(sc, {{"axis", sc.monte_carlo.axis}, {"trials", sc.monte_carlo.trials},
                                    {"estimator", sc.monte_carlo.estimator}, {"refine", sc.monte_carlo.refine}}));
        summary.files = {"monte_carlo.csv", "monte_carlo.json"};
        metrics["points"] = arr;
        break;
    }
    }

    io::write_json(out / "manifest.json", manifest(sc));
    io::write_json(out / "metrics.json", metrics);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    io::write_json(out / "run.json", {{"runtime_s", seconds}, {"workers", workers}});
    summary.files.insert(summary.files.end(), {"manifest.json", "metrics.json", "run.json"});
    summary.metrics = std::move(metrics);
    return summary;
}

} // namespace nearfield
