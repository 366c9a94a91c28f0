#include "ewe/report_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace ewe {

std::string CsvTable::num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void CsvTable::add_row(std::vector<std::string> row) {
    if (row.size() != header.size())
        throw ContractError("csv: row width " + std::to_string(row.size()) + " != header width " +
                            std::to_string(header.size()));
    rows.push_back(std::move(row));
}

void CsvTable::write(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw FormatError(path + ": cannot open for write", 0);
    for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << "\n";
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
        os << "\n";
    }
}

void write_attack_report_csv(const std::string& path, const AttackReport& report) {
    CsvTable t;
    t.header = {"attack", "param", "task_acc", "wm_raw", "wm_adjusted"};
    for (const AttackPoint& p : report.points)
        t.add_row({report.attack, CsvTable::num(p.param), CsvTable::num(p.task_acc),
                   CsvTable::num(p.wm_raw), CsvTable::num(p.wm_adjusted)});
    t.write(path);
}

namespace {

const char* kPalette[] = {"#1f6fb2", "#d1495b", "#3a7d44", "#8e5ba6", "#c97b1f", "#4d4d4d"};

std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

}  // namespace

void write_svg_chart(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<SvgSeries>& series, bool lines) {
    const int W = 720, H = 480;
    const double ml = 70, mr = 24, mt = 44, mb = 56;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmin > xmax) {
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }
    if (xmax - xmin < 1e-12) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (ymax - ymin < 1e-12) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto sy = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

    std::ofstream os(path);
    if (!os) throw FormatError(path + ": cannot open for write", 0);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" "
          "font-family=\"sans-serif\">" << title << "</text>\n";
    // axes
    os << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
       << H - mb << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
       << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xmin + (xmax - xmin) * i / 4.0;
        const double fy = ymin + (ymax - ymin) * i / 4.0;
        os << "<text x=\"" << sx(fx) << "\" y=\"" << H - mb + 18
           << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">"
           << fmt_tick(fx) << "</text>\n";
        os << "<text x=\"" << ml - 8 << "\" y=\"" << sy(fy) + 4
           << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">"
           << fmt_tick(fy) << "</text>\n";
        os << "<line x1=\"" << ml << "\" y1=\"" << sy(fy) << "\" x2=\"" << W - mr << "\" y2=\""
           << sy(fy) << "\" stroke=\"#dddddd\"/>\n";
    }
    os << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 14
       << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" << x_label
       << "</text>\n";
    os << "<text x=\"18\" y=\"" << (mt + H - mb) / 2
       << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" "
          "transform=\"rotate(-90 18 " << (mt + H - mb) / 2 << ")\">" << y_label << "</text>\n";

    int ci = 0;
    for (const auto& s : series) {
        const char* color = kPalette[ci % 6];
        if (lines && s.points.size() > 1) {
            os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
            for (const auto& [x, y] : s.points) os << sx(x) << "," << sy(y) << " ";
            os << "\"/>\n";
        }
        for (const auto& [x, y] : s.points)
            os << "<circle cx=\"" << sx(x) << "\" cy=\"" << sy(y) << "\" r=\"3\" fill=\"" << color
               << "\"/>\n";
        os << "<text x=\"" << W - mr - 6 << "\" y=\"" << mt + 16 * ci + 12
           << "\" text-anchor=\"end\" font-size=\"12\" font-family=\"sans-serif\" fill=\"" << color
           << "\">" << s.name << "</text>\n";
        ++ci;
    }
    os << "</svg>\n";
}

}  // namespace ewe
