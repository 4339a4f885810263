// Heatmap-to-point detection and precision/recall evaluation.
//
// A heatmap is thresholded, 8-connected components are labeled, and each
// component becomes one detection at its intensity-weighted centroid with
// the component's peak probability as score.  Detections are matched to
// ground-truth points greedily in descending score order, each claiming its
// nearest unmatched truth within the match radius.  Precision at zero
// detections is defined as 1.0 so threshold sweeps stay total.
#pragma once

#include "petrel/raster.hpp"

#include <string>
#include <vector>

namespace petrel::detect {

struct Detection {
    double x = 0.0, y = 0.0; // intensity-weighted centroid
    double score = 0.0;      // component max probability
};

struct MatchResult {
    struct Pair {
        int detection = 0, truth = 0;
        double distance = 0.0;
    };
    std::vector<Pair> pairs;
    std::vector<int> fp; // unmatched detection indices
    std::vector<int> fn; // unmatched truth indices
};

struct PRPoint {
    double threshold = 0.0;
    long tp = 0, fp = 0, fn = 0;
    double precision = 1.0, recall = 1.0;
};

constexpr double kDefaultMatchRadius = 5.0;
constexpr double kOperatingThreshold = 0.45;

// 0.05 to 0.95 in steps of 0.05, with the operating threshold included.
std::vector<double> default_thresholds();

std::vector<Detection> extract_detections(const raster::Raster& heatmap, double threshold);

// Greedy one-to-one matching, deterministic: detections in descending score
// (ties by lower index), nearest unmatched truth within radius (distance
// ties by lower truth index).
MatchResult match_points(const std::vector<Detection>& detections,
                         const std::vector<raster::PointLabel>& truths, double radius);

PRPoint pr_from_counts(double threshold, long tp, long fp, long fn);

// Threshold sweep with a fixed segmentation: components are extracted once
// at the lowest threshold and each curve point keeps those whose peak score
// reaches its threshold.  Detections therefore only disappear as the
// threshold rises (a score-filtered set is a prefix of the greedy matching
// order), which makes recall non-increasing across the sweep by
// construction.  Re-segmenting at every threshold would not have that
// property: one low-threshold component can split into several detections
// at a higher threshold.  Single-threshold extraction stays available via
// extract_detections.  thresholds must be sorted ascending and non-empty.
std::vector<PRPoint> pr_curve(const raster::Raster& heatmap,
                              const raster::PointLabelSet& truths,
                              const std::vector<double>& thresholds, double radius);

long count_estimate(const PRPoint& point); // tp + fp at that operating point

// Trapezoidal area under the precision-recall sweep, anchored at recall 0
// with the lowest-recall point's precision.
double average_precision(std::vector<PRPoint> points);

void save_detections_csv(const std::vector<Detection>& detections, const std::string& path);
void save_pr_csv(const std::vector<PRPoint>& points, const std::string& path);

} // namespace petrel::detect
