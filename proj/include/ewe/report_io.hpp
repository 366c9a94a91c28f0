#pragma once

#include <string>
#include <vector>

#include "ewe/attacks.hpp"

namespace ewe {

// CSV with a fixed header; values carry 9 significant digits so reruns with
// the same manifest reproduce files byte for byte.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> row);
    void write(const std::string& path) const;
    static std::string num(double v);
};

void write_attack_report_csv(const std::string& path, const AttackReport& report);

// Minimal dependency-free SVG charts (plain XML).
struct SvgSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

void write_svg_chart(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<SvgSeries>& series, bool lines);

}  // namespace ewe
