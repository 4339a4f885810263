#include "petrel/detection.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace petrel::detect {

std::vector<double> default_thresholds() {
    std::vector<double> t;
    for (int i = 1; i <= 19; ++i) t.push_back(static_cast<double>(i * 5) / 100.0);
    t.push_back(kOperatingThreshold);
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return t;
}

std::vector<Detection> extract_detections(const raster::Raster& heatmap, double threshold) {
    if (heatmap.band_count() != 1)
        throw std::runtime_error("detect: heatmap must have exactly 1 band");
    if (!(threshold > 0.0 && threshold < 1.0))
        throw std::runtime_error("detect: threshold must lie in (0,1)");
    const int W = heatmap.width, H = heatmap.height;
    const float* v = heatmap.plane(0);
    std::vector<std::uint8_t> visited(static_cast<std::size_t>(W) * H, 0);

    std::vector<Detection> out;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < visited.size(); ++start) {
        if (visited[start] || v[start] < threshold) continue;
        // Flood one 8-connected component, accumulating its centroid moments.
        double wsum = 0.0, wx = 0.0, wy = 0.0, peak = 0.0;
        stack.assign(1, start);
        visited[start] = 1;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            const int x = static_cast<int>(i % W), y = static_cast<int>(i / W);
            const double val = v[i];
            wsum += val;
            wx += val * x;
            wy += val * y;
            peak = std::max(peak, val);
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const int nx = x + dx, ny = y + dy;
                    if (nx < 0 || nx >= W || ny < 0 || ny >= H) continue;
                    const std::size_t ni = static_cast<std::size_t>(ny) * W + nx;
                    if (!visited[ni] && v[ni] >= threshold) {
                        visited[ni] = 1;
                        stack.push_back(ni);
                    }
                }
            }
        }
        out.push_back({wx / wsum, wy / wsum, peak});
    }
    return out;
}

MatchResult match_points(const std::vector<Detection>& detections,
                         const std::vector<raster::PointLabel>& truths, double radius) {
    if (!(radius > 0.0)) throw std::runtime_error("detect: match radius must be positive");
    std::vector<int> order(detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return detections[a].score > detections[b].score;
    });

    MatchResult res;
    std::vector<std::uint8_t> truth_taken(truths.size(), 0);
    std::vector<std::uint8_t> det_matched(detections.size(), 0);
    const double r2 = radius * radius;
    for (int di : order) {
        int best = -1;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (std::size_t ti = 0; ti < truths.size(); ++ti) {
            if (truth_taken[ti]) continue;
            const double dx = detections[di].x - truths[ti].x;
            const double dy = detections[di].y - truths[ti].y;
            const double d2 = dx * dx + dy * dy;
            if (d2 <= r2 && d2 < best_d2) {
                best_d2 = d2;
                best = static_cast<int>(ti);
            }
        }
        if (best >= 0) {
            truth_taken[best] = 1;
            det_matched[di] = 1;
            res.pairs.push_back({di, best, std::sqrt(best_d2)});
        }
    }
    for (std::size_t di = 0; di < detections.size(); ++di)
        if (!det_matched[di]) res.fp.push_back(static_cast<int>(di));
    for (std::size_t ti = 0; ti < truths.size(); ++ti)
        if (!truth_taken[ti]) res.fn.push_back(static_cast<int>(ti));
    return res;
}

PRPoint pr_from_counts(double threshold, long tp, long fp, long fn) {
    if (tp < 0 || fp < 0 || fn < 0) throw std::runtime_error("detect: negative count");
    PRPoint p;
    p.threshold = threshold;
    p.tp = tp;
    p.fp = fp;
    p.fn = fn;
    p.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 1.0;
    p.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 1.0;
    return p;
}

std::vector<PRPoint> pr_curve(const raster::Raster& heatmap,
                              const raster::PointLabelSet& truths,
                              const std::vector<double>& thresholds, double radius) {
    if (thresholds.empty()) throw std::runtime_error("detect: thresholds empty");
    if (!std::is_sorted(thresholds.begin(), thresholds.end()))
        throw std::runtime_error("detect: thresholds must be sorted ascending");
    const auto base = extract_detections(heatmap, thresholds.front());
    std::vector<PRPoint> out;
    out.reserve(thresholds.size());
    std::vector<Detection> kept;
    for (double t : thresholds) {
        kept.clear();
        for (const auto& d : base)
            if (d.score >= t) kept.push_back(d);
        const auto m = match_points(kept, truths.points, radius);
        out.push_back(pr_from_counts(t, static_cast<long>(m.pairs.size()),
                                     static_cast<long>(m.fp.size()),
                                     static_cast<long>(m.fn.size())));
    }
    return out;
}

long count_estimate(const PRPoint& point) { return point.tp + point.fp; }

double average_precision(std::vector<PRPoint> points) {
    if (points.empty()) return 0.0;
    std::sort(points.begin(), points.end(),
              [](const PRPoint& a, const PRPoint& b) { return a.recall < b.recall; });
    double ap = points.front().recall * points.front().precision;
    for (std::size_t i = 1; i < points.size(); ++i)
        ap += (points[i].recall - points[i - 1].recall) *
              0.5 * (points[i].precision + points[i - 1].precision);
    return ap;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

void save_detections_csv(const std::vector<Detection>& detections, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("detect: cannot write " + path);
    f << "x,y,score\n";
    for (const auto& d : detections)
        f << fmt(d.x) << "," << fmt(d.y) << "," << fmt(d.score) << "\n";
    f.close();
    if (!f) throw std::runtime_error("detect: write failed for " + path);
}

void save_pr_csv(const std::vector<PRPoint>& points, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("detect: cannot write " + path);
    f << "threshold,tp,fp,fn,precision,recall\n";
    for (const auto& p : points)
        f << fmt(p.threshold) << "," << p.tp << "," << p.fp << "," << p.fn << ","
          << fmt(p.precision) << "," << fmt(p.recall) << "\n";
    f.close();
    if (!f) throw std::runtime_error("detect: write failed for " + path);
}

} // namespace petrel::detect
