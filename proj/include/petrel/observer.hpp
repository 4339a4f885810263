// Inter-observer variation analysis.
//
// Observer label sets are compared pairwise by treating one set as ground
// truth and another as score-1 detections, giving a KxK precision/recall
// matrix.  When a model heatmap for the same scene is present, the model is
// evaluated against every observer's labels in turn, and a "within range"
// assessment checks, per truth set, whether some threshold reaches at least
// the worst precision and worst recall that the other observers achieve
// against that truth set.  That dominance reading of "within the range of
// inter-observer variation" is this tool's own formalization.
#pragma once

#include "petrel/detection.hpp"
#include "petrel/raster.hpp"

#include <optional>
#include <string>
#include <vector>

namespace petrel::obs {

struct ObserverStudy {
    std::vector<raster::PointLabelSet> label_sets; // >= 2, one scene frame
    std::optional<raster::Raster> heatmap;         // model output, 1 band
    double radius = detect::kDefaultMatchRadius;
};

struct ObserverMatrix {
    std::vector<std::string> ids;
    // cells[i][j]: observer i as detections against observer j as truth.
    std::vector<std::vector<detect::PRPoint>> cells;
};

ObserverMatrix observer_matrix(const ObserverStudy& study);

// One PR curve (over the default threshold grid) per observer-as-truth.
std::vector<std::vector<detect::PRPoint>> model_vs_observers(const ObserverStudy& study);

struct WithinRangeEntry {
    std::string truth_id;
    bool within = false;
    double min_precision = 0.0; // worst precision among other observers
    double min_recall = 0.0;    // worst recall among other observers
    // Best simultaneous slack max_t min(precision-min_precision,
    // recall-min_recall); within == (margin >= 0).
    double margin = 0.0;
    double best_threshold = 0.0;
    double best_precision = 0.0;
    double best_recall = 0.0;
};

struct WithinRangeReport {
    std::vector<WithinRangeEntry> entries;
    int passed = 0;
};

WithinRangeReport within_range_assessment(const ObserverStudy& study);

void save_matrix_csv(const ObserverMatrix& matrix, const std::string& path);
void save_report_json(const WithinRangeReport& report, const std::string& path);

} // namespace petrel::obs
