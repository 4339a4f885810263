// Dependency-free SVG precision/recall figures: curves as polylines,
// observer comparisons as point markers, both on a unit square with axes
// and a legend.  Output is plain XML, stable across reruns.
#pragma once

#include <string>
#include <utility>
#include <vector>

namespace petrel::plot {

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points; // (recall, precision)
};

std::string pr_figure_svg(const std::vector<Series>& curves,
                          const std::vector<Series>& markers, const std::string& title);

void save_svg(const std::string& svg, const std::string& path);

} // namespace petrel::plot
