#include "petrel/observer.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <stdexcept>

namespace petrel::obs {

namespace {

std::vector<detect::Detection> as_detections(const raster::PointLabelSet& labels) {
    std::vector<detect::Detection> out;
    out.reserve(labels.points.size());
    for (const auto& p : labels.points) out.push_back({p.x, p.y, 1.0});
    return out;
}

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

ObserverMatrix observer_matrix(const ObserverStudy& study) {
    const std::size_t K = study.label_sets.size();
    if (K < 2) throw std::runtime_error("observer: matrix needs at least 2 label sets");
    ObserverMatrix m;
    for (const auto& s : study.label_sets) m.ids.push_back(s.observer_id);
    m.cells.resize(K, std::vector<detect::PRPoint>(K));
    for (std::size_t i = 0; i < K; ++i) {
        const auto dets = as_detections(study.label_sets[i]);
        for (std::size_t j = 0; j < K; ++j) {
            const auto res =
                detect::match_points(dets, study.label_sets[j].points, study.radius);
            m.cells[i][j] = detect::pr_from_counts(1.0, static_cast<long>(res.pairs.size()),
                                                   static_cast<long>(res.fp.size()),
                                                   static_cast<long>(res.fn.size()));
        }
    }
    return m;
}

std::vector<std::vector<detect::PRPoint>> model_vs_observers(const ObserverStudy& study) {
    if (!study.heatmap) throw std::runtime_error("observer: study has no model heatmap");
    std::vector<std::vector<detect::PRPoint>> out;
    const auto thresholds = detect::default_thresholds();
    for (const auto& labels : study.label_sets)
        out.push_back(detect::pr_curve(*study.heatmap, labels, thresholds, study.radius));
    return out;
}

WithinRangeReport within_range_assessment(const ObserverStudy& study) {
    if (!study.heatmap) throw std::runtime_error("observer: study has no model heatmap");
    const std::size_t K = study.label_sets.size();
    if (K < 3)
        throw std::runtime_error("observer: within-range assessment needs >= 3 label sets");
    const ObserverMatrix matrix = observer_matrix(study);
    const auto curves = model_vs_observers(study);

    WithinRangeReport report;
    for (std::size_t t = 0; t < K; ++t) {
        WithinRangeEntry e;
        e.truth_id = study.label_sets[t].observer_id;
        double min_p = 1.0, min_r = 1.0;
        for (std::size_t o = 0; o < K; ++o) {
            if (o == t) continue;
            min_p = std::min(min_p, matrix.cells[o][t].precision);
            min_r = std::min(min_r, matrix.cells[o][t].recall);
        }
        e.min_precision = min_p;
        e.min_recall = min_r;
        e.margin = -1.0;
        for (const auto& point : curves[t]) {
            const double slack =
                std::min(point.precision - min_p, point.recall - min_r);
            if (slack > e.margin) {
                e.margin = slack;
                e.best_threshold = point.threshold;
                e.best_precision = point.precision;
                e.best_recall = point.recall;
            }
        }
        e.within = e.margin >= 0.0;
        if (e.within) ++report.passed;
        report.entries.push_back(e);
    }
    return report;
}

void save_matrix_csv(const ObserverMatrix& matrix, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("observer: cannot write " + path);
    f << "observer_as_truth,observer_as_detector,precision,recall\n";
    for (std::size_t j = 0; j < matrix.ids.size(); ++j)
        for (std::size_t i = 0; i < matrix.ids.size(); ++i)
            f << matrix.ids[j] << "," << matrix.ids[i] << ","
              << fmt(matrix.cells[i][j].precision) << "," << fmt(matrix.cells[i][j].recall)
              << "\n";
    f.close();
    if (!f) throw std::runtime_error("observer: write failed for " + path);
}

void save_report_json(const WithinRangeReport& report, const std::string& path) {
    nlohmann::json j;
    j["criterion"] =
        "some threshold reaches the worst precision and worst recall that the other "
        "observers achieve against this truth set (tool-defined reading of the "
        "inter-observer range)";
    j["passed"] = report.passed;
    j["total"] = report.entries.size();
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : report.entries) {
        entries.push_back({{"truth_id", e.truth_id},
                           {"within", e.within},
                           {"min_precision", e.min_precision},
                           {"min_recall", e.min_recall},
                           {"margin", e.margin},
                           {"best_threshold", e.best_threshold},
                           {"best_precision", e.best_precision},
                           {"best_recall", e.best_recall}});
    }
    j["entries"] = entries;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("observer: cannot write " + path);
    f << j.dump(2) << "\n";
    f.close();
    if (!f) throw std::runtime_error("observer: write failed for " + path);
}

} // namespace petrel::obs
