#include "nearfield/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

namespace nearfield::io
{

std::string format_double(double value)
{
    if (std::isnan(value))
        return "nan";
    if (std::isinf(value))
        return value > 0 ? "inf" : "-inf";
    char buffer[64];
    const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, result.ptr);
}

CsvTable::CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

void CsvTable::add_row(const std::vector<double> &values)
{
    std::vector<std::string> cells;
    cells.reserve(values.size());
    for (double v : values)
        cells.push_back(format_double(v));
    add_row(cells);
}

void CsvTable::add_row(const std::vector<std::string> &cells)
{
    if (cells.size() != columns_.size())
        throw std::invalid_argument("CSV row has " + std::to_string(cells.size()) + " cells, expected " +
                                    std::to_string(columns_.size()));
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i)
    {
        if (i)
            line += ',';
        line += cells[i];
    }
    rows_.push_back(std::move(line));
}

std::string CsvTable::str() const
{
    std::string out;
    for (std::size_t i = 0; i < columns_.size(); ++i)
    {
        if (i)
            out += ',';
        out += columns_[i];
    }
    out += '\n';
    for (const auto &row : rows_)
    {
        out += row;
        out += '\n';
    }
    return out;
}

void CsvTable::write(const std::filesystem::path &path) const { write_text(path, str()); }

void write_text(const std::filesystem::path &path, std::string_view text)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out)
        throw std::runtime_error("failed writing " + path.string());
}

void write_json(const std::filesystem::path &path, const json &value) { write_text(path, value.dump(2) + "\n"); }

namespace
{
const char *spacing_name(AxisSpacing s)
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
} // namespace

json axis_metadata(const GridAxis &axis)
{
    json j;
    j["points"] = axis.size();
    j["spacing"] = spacing_name(axis.spacing);
    if (!axis.values.empty())
    {
        j["lower"] = axis.values.front();
        j["upper"] = axis.values.back();
        j["step"] = axis.step();
    }
    return j;
}

json spectrum_metadata(const SpectrumGrid &spectrum)
{
    json j;
    j["kind"] = spectrum.kind;
    j["theta"] = axis_metadata(spectrum.theta);
    if (spectrum.range.size() == 1 && std::isinf(spectrum.range.values[0]))
        j["r"] = nullptr;
    else
        j["r"] = axis_metadata(spectrum.range);
    j["include_amplitude"] = spectrum.include_amplitude;
    j["flagged_cells"] = spectrum.flagged.size();
    if (spectrum.ceiling)
        j["clamp_ceiling"] = *spectrum.ceiling;
    return j;
}

CsvTable spectrum_table(const SpectrumGrid &spectrum)
{
    CsvTable table({"theta_rad", "r_m", "value"});
    for (std::size_t i = 0; i < spectrum.theta.size(); ++i)
        for (std::size_t j = 0; j < spectrum.range.size(); ++j)
            table.add_row(std::vector<double>{spectrum.theta.values[i], spectrum.range.values[j],
                                              spectrum.values(static_cast<Eigen::Index>(i),
                                                              static_cast<Eigen::Index>(j))});
    return table;
}

CsvTable trajectory_table(const std::vector<FilterState> &states)
{
    std::vector<std::string> columns = {"cpi_index", "r_m", "theta_rad", "vr_mps", "vtheta_mps"};
    for (int a = 0; a < 4; ++a)
        for (int b = a; b < 4; ++b)
            columns.push_back("q" + std::to_string(a) + std::to_string(b));
    CsvTable table(columns);
    for (const auto &s : states)
    {
        std::vector<std::string> cells = {std::to_string(s.cpi)};
        for (int k = 0; k < 4; ++k)
            cells.push_back(format_double(s.q[k]));
        for (int a = 0; a < 4; ++a)
            for (int b = a; b < 4; ++b)
                cells.push_back(format_double(s.covariance(a, b)));
        table.add_row(cells);
    }
    return table;
}

json peaks_json(const PeakSet &peaks)
{
    json arr = json::array();
    for (const auto &p : peaks.peaks)
        arr.push_back({{"theta_rad", p.theta}, {"r_m", p.range}, {"value", p.value},
                       {"theta_index", p.theta_index}, {"r_index", p.range_index}});
    return arr;
}

} // namespace nearfield::io
