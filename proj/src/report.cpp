#include "mmpath/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "mmpath/common.hpp"
#include "mmpath/train.hpp"

namespace mmpath {

namespace fs = std::filesystem;

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& file) {
    std::ifstream f(file);
    if (!f) throw InputError("missing input file: " + file.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

// Minimal polyline chart; an SVG is an image file every browser renders.
std::string loss_curve_svg(const std::vector<std::vector<std::string>>& rows) {
    const int width = 720, height = 400, margin = 50;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";

    if (rows.size() < 2) {
        svg << "<text x=\"20\" y=\"40\" font-family=\"monospace\">no loss data</text>\n</svg>\n";
        return svg.str();
    }
    const auto& header = rows[0];
    size_t series_count = header.size() - 1;
    std::vector<std::vector<double>> series(series_count);
    std::vector<double> epochs;
    for (size_t r = 1; r < rows.size(); ++r) {
        epochs.push_back(std::stod(rows[r][0]));
        for (size_t c = 1; c < rows[r].size() && c <= series_count; ++c) {
            series[c - 1].push_back(std::stod(rows[r][c]));
        }
    }
    double ymin = 0, ymax = 1e-9, xmin = epochs.front(), xmax = epochs.back();
    for (const auto& s : series) {
        for (double v : s) ymax = std::max(ymax, v);
    }
    if (xmax == xmin) xmax = xmin + 1;

    auto sx = [&](double x) {
        return margin + (x - xmin) / (xmax - xmin) * (width - 2 * margin);
    };
    auto sy = [&](double y) {
        return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin);
    };
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                   "#9467bd", "#8c564b", "#e377c2"};

    svg << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
        << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
        << height - margin << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"" << height - 12
        << "\" font-family=\"monospace\" font-size=\"12\">epoch</text>\n";

    for (size_t s = 0; s < series.size(); ++s) {
        if (series[s].empty()) continue;
        svg << "<polyline fill=\"none\" stroke=\"" << colors[s % 7] << "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < series[s].size(); ++i) {
            svg << format_num(sx(epochs[i])) << "," << format_num(sy(series[s][i]));
            if (i + 1 < series[s].size()) svg << " ";
        }
        svg << "\"/>\n";
        svg << "<text x=\"" << width - margin + 4 << "\" y=\"" << 20 + 14 * static_cast<int>(s)
            << "\" font-family=\"monospace\" font-size=\"11\" fill=\"" << colors[s % 7] << "\">"
            << header[s + 1] << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

} // namespace

void write_report(const fs::path& run_dir) {
    auto loss_rows = read_csv(run_dir / "loss_log.csv");
    auto metric_rows = read_csv(run_dir / "metrics.csv");

    {
        std::ofstream f(run_dir / "loss_curve.svg");
        if (!f) throw InputError("cannot write loss_curve.svg");
        f << loss_curve_svg(loss_rows);
    }

    std::ofstream f(run_dir / "report.md");
    if (!f) throw InputError("cannot write report.md");
    f << "# Run report\n\n";

    fs::path cfg_file = run_dir / "config.resolved.json";
    if (fs::exists(cfg_file)) {
        std::ifstream cf(cfg_file);
        nlohmann::json cfg = nlohmann::json::parse(cf);
        f << "## Configuration\n\n```json\n" << cfg.dump(2) << "\n```\n\n";
    }

    f << "## Metrics\n\n";
    if (metric_rows.size() < 2) {
        f << "no results\n\n";
    } else {
        for (size_t r = 0; r < metric_rows.size(); ++r) {
            f << "|";
            for (const auto& cell : metric_rows[r]) f << " " << cell << " |";
            f << "\n";
            if (r == 0) {
                f << "|";
                for (size_t c = 0; c < metric_rows[0].size(); ++c) f << "---|";
                f << "\n";
            }
        }
        f << "\n";
    }

    f << "## Loss curves\n\n![loss curves](loss_curve.svg)\n\n";
    if (loss_rows.size() > 1) {
        const auto& first = loss_rows[1];
        const auto& last = loss_rows.back();
        f << "Final epoch " << last[0] << ": total " << last.back() << " (epoch " << first[0]
          << ": " << first.back() << ").\n";
    }
}

} // namespace mmpath
