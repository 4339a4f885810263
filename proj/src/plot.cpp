#include "petrel/plot.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace petrel::plot {

namespace {

constexpr int kWidth = 720, kHeight = 540;
constexpr int kLeft = 70, kRight = 170, kTop = 48, kBottom = 56;
constexpr int kPlotW = kWidth - kLeft - kRight;
constexpr int kPlotH = kHeight - kTop - kBottom;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"};
constexpr int kPaletteSize = 10;

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

double px(double recall) { return kLeft + recall * kPlotW; }
double py(double precision) { return kTop + (1.0 - precision) * kPlotH; }

} // namespace

std::string pr_figure_svg(const std::vector<Series>& curves,
                          const std::vector<Series>& markers, const std::string& title) {
    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(kWidth) +
         "\" height=\"" + std::to_string(kHeight) + "\" viewBox=\"0 0 " +
         std::to_string(kWidth) + " " + std::to_string(kHeight) + "\">\n";
    s += "<rect width=\"" + std::to_string(kWidth) + "\" height=\"" +
         std::to_string(kHeight) + "\" fill=\"white\"/>\n";
    s += "<text x=\"" + std::to_string(kLeft) + "\" y=\"28\" font-family=\"sans-serif\" "
         "font-size=\"16\">" + xml_escape(title) + "</text>\n";

    // Grid, ticks, axis labels.
    for (int i = 0; i <= 5; ++i) {
        const double f = i / 5.0;
        s += "<line x1=\"" + num(px(f)) + "\" y1=\"" + num(py(0)) + "\" x2=\"" + num(px(f)) +
             "\" y2=\"" + num(py(1)) + "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        s += "<line x1=\"" + num(px(0)) + "\" y1=\"" + num(py(f)) + "\" x2=\"" + num(px(1)) +
             "\" y2=\"" + num(py(f)) + "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        s += "<text x=\"" + num(px(f)) + "\" y=\"" + num(py(0) + 20) +
             "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">" +
             num(f) + "</text>\n";
        s += "<text x=\"" + num(px(0) - 10) + "\" y=\"" + num(py(f) + 4) +
             "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">" + num(f) +
             "</text>\n";
    }
    s += "<rect x=\"" + std::to_string(kLeft) + "\" y=\"" + std::to_string(kTop) +
         "\" width=\"" + std::to_string(kPlotW) + "\" height=\"" + std::to_string(kPlotH) +
         "\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n";
    s += "<text x=\"" + num(kLeft + kPlotW / 2.0) + "\" y=\"" +
         std::to_string(kHeight - 14) +
         "\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">recall"
         "</text>\n";
    s += "<text x=\"20\" y=\"" + num(kTop + kPlotH / 2.0) +
         "\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\" "
         "transform=\"rotate(-90 20 " + num(kTop + kPlotH / 2.0) + ")\">precision</text>\n";

    int color = 0;
    double legend_y = kTop + 10;
    auto legend_entry = [&](const std::string& label, const char* stroke, bool marker) {
        const double lx = kWidth - kRight + 14;
        if (marker) {
            s += "<circle cx=\"" + num(lx + 9) + "\" cy=\"" + num(legend_y - 4) +
                 "\" r=\"4\" fill=\"" + stroke + "\"/>\n";
        } else {
            s += "<line x1=\"" + num(lx) + "\" y1=\"" + num(legend_y - 4) + "\" x2=\"" +
                 num(lx + 18) + "\" y2=\"" + num(legend_y - 4) + "\" stroke=\"" + stroke +
                 "\" stroke-width=\"2\"/>\n";
        }
        s += "<text x=\"" + num(lx + 24) + "\" y=\"" + num(legend_y) +
             "\" font-family=\"sans-serif\" font-size=\"12\">" + xml_escape(label) +
             "</text>\n";
        legend_y += 18;
    };

    for (const auto& c : curves) {
        const char* stroke = kPalette[color % kPaletteSize];
        ++color;
        std::string pts;
        for (const auto& [r, p] : c.points) pts += num(px(r)) + "," + num(py(p)) + " ";
        s += "<polyline fill=\"none\" stroke=\"" + std::string(stroke) +
             "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
        legend_entry(c.label, stroke, false);
    }
    for (const auto& m : markers) {
        const char* fill = kPalette[color % kPaletteSize];
        ++color;
        for (const auto& [r, p] : m.points)
            s += "<circle cx=\"" + num(px(r)) + "\" cy=\"" + num(py(p)) +
                 "\" r=\"4\" fill=\"" + std::string(fill) + "\" fill-opacity=\"0.8\"/>\n";
        legend_entry(m.label, fill, true);
    }
    s += "</svg>\n";
    return s;
}

void save_svg(const std::string& svg, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("plot: cannot write " + path);
    f << svg;
    f.close();
    if (!f) throw std::runtime_error("plot: write failed for " + path);
}

} // namespace petrel::plot
