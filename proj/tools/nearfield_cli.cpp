#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "nearfield/scenario.hpp"

namespace
{

using nearfield::io::json;

json error_json(const std::exception &e)
{
    json err;
    err["kind"] = nearfield::error_kind(e);
    err["message"] = e.what();
    if (const auto *s = dynamic_cast<const nearfield::ScenarioError *>(&e))
        err["field"] = s->field();
    if (const auto *v = dynamic_cast<const nearfield::ValidityError *>(&e))
        err["condition"] = v->condition();
    return json{{"error", err}};
}

std::string read_file(const std::string &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw nearfield::ScenarioError("<config>", "cannot read config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Options
{
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::size_t workers = 0;
};

int execute(nearfield::Command command, const Options &opt)
{
    auto scenario = nearfield::parse_scenario(read_file(opt.config), command);
    if (opt.seed)
    {
        scenario.seed = *opt.seed;
        scenario.resolved["seed"] = *opt.seed;
    }
    const auto summary = nearfield::run(scenario, opt.out, opt.workers);
    json report{{"out", summary.directory.string()}, {"files", summary.files}};
    std::cout << report.dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Near-field array localization and sensing toolkit"};
    app.set_version_flag("--version", nearfield::kToolkitVersion);
    app.require_subcommand(1);

    const std::pair<const char *, const char *> commands[] = {
        {"simulate", "synthesize array snapshots"},
        {"spectrum", "DML and MUSIC location spectra"},
        {"modified-music", "decoupled direction/distance MUSIC on a symmetric ULA"},
        {"track", "EKF tracking of a moving target"},
        {"crb", "closed-form and numerical Cramer-Rao bounds"},
        {"af", "array-factor resolution analysis"},
        {"monte-carlo", "RMSE versus CRB sweeps"}};

    Options opt;
    std::uint64_t seed = 0;
    for (const auto &[name, help] : commands)
    {
        auto *sub = app.add_subcommand(name, help);
        sub->add_option("--config", opt.config, "scenario or manifest JSON")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", opt.out, "output directory")->required();
        sub->add_option("--seed", seed, "override the scenario seed");
        sub->add_option("--workers", opt.workers, "worker threads (0 = all cores)");
    }

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        return app.exit(e);
    }

    for (const auto *sub : app.get_subcommands())
    {
        if (sub->count("--seed"))
            opt.seed = seed;
        try
        {
            return execute(nearfield::parse_command(sub->get_name()), opt);
        }
        catch (const std::exception &e)
        {
            std::cerr << error_json(e).dump() << "\n";
            return 2;
        }
    }
    return 1;
}
