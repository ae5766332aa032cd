#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nearfield/subspace.hpp"
#include "nearfield/tracking.hpp"

namespace nearfield::io
{

using json = nlohmann::ordered_json;

// Shortest representation that round-trips; "inf", "-inf" and "nan" for
// non-finite values.
std::string format_double(double value);

class CsvTable
{
public:
    explicit CsvTable(std::vector<std::string> columns);

    void add_row(const std::vector<double> &values);
    void add_row(const std::vector<std::string> &cells);
    std::size_t rows() const { return rows_.size(); }
    std::string str() const;
    void write(const std::filesystem::path &path) const;

private:
    std::vector<std::string> columns_;
    std::vector<std::string> rows_;
};

void write_text(const std::filesystem::path &path, std::string_view text);
void write_json(const std::filesystem::path &path, const json &value);

json axis_metadata(const GridAxis &axis);
json spectrum_metadata(const SpectrumGrid &spectrum);

// theta_rad, r_m, value
CsvTable spectrum_table(const SpectrumGrid &spectrum);
// cpi_index, r_m, theta_rad, vr_mps, vtheta_mps, q_ij (upper triangle)
CsvTable trajectory_table(const std::vector<FilterState> &states);
json peaks_json(const PeakSet &peaks);

} // namespace nearfield::io
