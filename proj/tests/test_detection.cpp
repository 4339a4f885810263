#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "petrel/detection.hpp"
#include "petrel/rng.hpp"
#include "support/oracles.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace petrel;
namespace fs = std::filesystem;

namespace {

raster::Raster heatmap_from(const std::vector<float>& v, int w, int h) {
    raster::Raster r = raster::Raster::make(w, h, {"prob"});
    REQUIRE(v.size() == r.plane_size());
    std::copy(v.begin(), v.end(), r.plane(0));
    return r;
}

} // namespace

TEST_CASE("extract_detections finds one weighted centroid per blob") {
    // Two separated 3x3 blobs; the second has an asymmetric weight pulling
    // its centroid right of the geometric center.
    std::vector<float> v(12 * 8, 0.0f);
    auto set = [&](int x, int y, float val) { v[y * 12 + x] = val; };
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) set(2 + dx, 2 + dy, 0.8f);
    set(2, 2, 1.0f);
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) set(8 + dx, 5 + dy, 0.6f);
    set(9, 5, 0.9f);

    auto dets = detect::extract_detections(heatmap_from(v, 12, 8), 0.5);
    REQUIRE(dets.size() == 2);
    CHECK(dets[0].x == doctest::Approx(2.0));
    CHECK(dets[0].y == doctest::Approx(2.0));
    CHECK(dets[0].score == doctest::Approx(1.0));
    // Centroid of the second blob: 8*(8*0.6) pulled by the 0.9 at x=9.
    const double expected_x = (0.6 * (7 + 8 + 9) * 3 + (0.9 - 0.6) * 9) / (0.6 * 9 + 0.3);
    CHECK(dets[1].x == doctest::Approx(expected_x));
    CHECK(dets[1].score == doctest::Approx(0.9));
}

TEST_CASE("threshold splits a bridged pair of blobs") {
    // Two peaks joined by a low bridge: one component at 0.3, two at 0.6.
    std::vector<float> v(11 * 3, 0.0f);
    auto set = [&](int x, int y, float val) { v[y * 11 + x] = val; };
    set(2, 1, 0.9f);
    set(3, 1, 0.5f);
    set(4, 1, 0.4f);
    set(5, 1, 0.4f);
    set(6, 1, 0.4f);
    set(7, 1, 0.5f);
    set(8, 1, 0.9f);
    auto low = detect::extract_detections(heatmap_from(v, 11, 3), 0.3);
    auto high = detect::extract_detections(heatmap_from(v, 11, 3), 0.6);
    CHECK(low.size() == 1);
    CHECK(high.size() == 2);
}

TEST_CASE("detections agree with the independent labeling oracle") {
    rng::Stream s(17);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<float> v(20 * 20);
        for (auto& x : v) x = static_cast<float>(s.uniform());
        auto hm = heatmap_from(v, 20, 20);
        auto dets = detect::extract_detections(hm, 0.8);
        auto ref = oracle::blobs_naive(hm, 0.8);
        REQUIRE(dets.size() == ref.size());
        // Match by nearest centroid; every pair must agree closely.
        std::vector<bool> used(ref.size(), false);
        for (const auto& d : dets) {
            double best = 1e18;
            std::size_t bi = 0;
            for (std::size_t i = 0; i < ref.size(); ++i) {
                if (used[i]) continue;
                const double dd = (d.x - ref[i].cx) * (d.x - ref[i].cx) +
                                  (d.y - ref[i].cy) * (d.y - ref[i].cy);
                if (dd < best) {
                    best = dd;
                    bi = i;
                }
            }
            used[bi] = true;
            CHECK(best < 1e-18);
            CHECK(d.score == doctest::Approx(ref[bi].peak).epsilon(1e-12));
        }
    }
}

TEST_CASE("8-connectivity joins diagonal pixels") {
    std::vector<float> v(4 * 4, 0.0f);
    v[0 * 4 + 0] = 0.9f;
    v[1 * 4 + 1] = 0.9f;
    v[2 * 4 + 2] = 0.9f;
    CHECK(detect::extract_detections(heatmap_from(v, 4, 4), 0.5).size() == 1);
}

TEST_CASE("extract_detections validates inputs") {
    auto hm = heatmap_from(std::vector<float>(16, 0.1f), 4, 4);
    CHECK_THROWS(detect::extract_detections(hm, 0.0));
    CHECK_THROWS(detect::extract_detections(hm, 1.0));
    raster::Raster multi = raster::Raster::make(4, 4, {"a", "b"});
    CHECK_THROWS(detect::extract_detections(multi, 0.5));
}

TEST_CASE("match_points pairs greedily by score with boundary-inclusive radius") {
    std::vector<raster::PointLabel> truths = {{0.0, 0.0}, {10.0, 0.0}};
    std::vector<detect::Detection> dets = {
        {3.0, 0.0, 0.9},  // exactly 3.0 from truth 0 at radius 3: matches
        {10.5, 0.0, 0.5},
    };
    auto m = detect::match_points(dets, truths, 3.0);
    REQUIRE(m.pairs.size() == 2);
    CHECK(m.pairs[0].detection == 0);
    CHECK(m.pairs[0].truth == 0);
    CHECK(m.pairs[0].distance == doctest::Approx(3.0));
    CHECK(m.fp.empty());
    CHECK(m.fn.empty());
}

TEST_CASE("higher-scoring detections claim contested truths first") {
    std::vector<raster::PointLabel> truths = {{5.0, 5.0}};
    std::vector<detect::Detection> dets = {
        {5.8, 5.0, 0.4}, // closer but weaker
        {6.0, 5.0, 0.9}, // stronger: wins the only truth
    };
    auto m = detect::match_points(dets, truths, 3.0);
    REQUIRE(m.pairs.size() == 1);
    CHECK(m.pairs[0].detection == 1);
    REQUIRE(m.fp.size() == 1);
    CHECK(m.fp[0] == 0);
}

TEST_CASE("equidistant truths resolve to the lower index") {
    std::vector<raster::PointLabel> truths = {{4.0, 5.0}, {6.0, 5.0}};
    std::vector<detect::Detection> dets = {{5.0, 5.0, 0.9}};
    auto m = detect::match_points(dets, truths, 3.0);
    REQUIRE(m.pairs.size() == 1);
    CHECK(m.pairs[0].truth == 0);
    REQUIRE(m.fn.size() == 1);
    CHECK(m.fn[0] == 1);
}

TEST_CASE("greedy matching is near-optimal against the exhaustive oracle") {
    rng::Stream s(23);
    int equal = 0;
    const int trials = 1000;
    for (int t = 0; t < trials; ++t) {
        const int nd = static_cast<int>(s.below(9));
        const int nt = static_cast<int>(s.below(9));
        std::vector<detect::Detection> dets;
        std::vector<raster::PointLabel> truths;
        for (int i = 0; i < nd; ++i)
            dets.push_back({s.uniform(0, 20), s.uniform(0, 20), s.uniform()});
        for (int i = 0; i < nt; ++i)
            truths.push_back({s.uniform(0, 20), s.uniform(0, 20)});

        const double radius = 4.0;
        auto m = detect::match_points(dets, truths, radius);

        std::vector<std::vector<int>> adj(nd);
        for (int d = 0; d < nd; ++d)
            for (int ti = 0; ti < nt; ++ti) {
                const double dx = dets[d].x - truths[ti].x;
                const double dy = dets[d].y - truths[ti].y;
                if (dx * dx + dy * dy <= radius * radius) adj[d].push_back(ti);
            }
        const int best = oracle::max_matching_size(adj, nt);
        CHECK(static_cast<int>(m.pairs.size()) <= best);
        if (static_cast<int>(m.pairs.size()) == best) ++equal;

        // Count bookkeeping always holds.
        CHECK(m.pairs.size() + m.fp.size() == dets.size());
        CHECK(m.pairs.size() + m.fn.size() == truths.size());
    }
    CHECK(equal >= 950);
}

TEST_CASE("precision-recall arithmetic on published counts") {
    auto p = detect::pr_from_counts(0.45, 752, 157, 183);
    CHECK(p.precision == doctest::Approx(0.8273).epsilon(0.0006));
    CHECK(p.recall == doctest::Approx(0.8043).epsilon(0.0006));
    CHECK(detect::count_estimate(p) == 909);

    auto empty = detect::pr_from_counts(0.5, 0, 0, 10);
    CHECK(empty.precision == 1.0); // no detections: vacuous precision
    CHECK(empty.recall == 0.0);
    auto no_truth = detect::pr_from_counts(0.5, 0, 3, 0);
    CHECK(no_truth.recall == 1.0);
    CHECK(no_truth.precision == 0.0);
    CHECK_THROWS(detect::pr_from_counts(0.5, -1, 0, 0));
}

TEST_CASE("pr_curve recall never increases as the threshold rises") {
    // Mimics a trained network's output: background probability below the
    // lowest grid threshold, isolated peaks of varying confidence.
    rng::Stream s(29);
    std::vector<float> v(40 * 40, 0.0f);
    for (auto& x : v) x = static_cast<float>(s.uniform() * 0.04);
    raster::PointLabelSet truths;
    truths.observer_id = "t";
    for (int i = 0; i < 6; ++i) {
        const int cx = 5 + 5 * i, cy = 8 + 4 * i;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
                v[(cy + dy) * 40 + cx + dx] = static_cast<float>(0.3 + 0.11 * i);
        truths.points.push_back({static_cast<double>(cx), static_cast<double>(cy)});
    }
    auto hm = heatmap_from(v, 40, 40);
    auto curve = detect::pr_curve(hm, truths, detect::default_thresholds(), 5.0);
    REQUIRE(curve.size() == 19); // 0.45 deduplicates into the grid
    for (std::size_t i = 1; i < curve.size(); ++i)
        CHECK(curve[i].recall <= curve[i - 1].recall);
    // The sweep filters the base segmentation by score, so the first row
    // accounts for exactly the detections extracted at the lowest threshold.
    const auto base = detect::extract_detections(hm, curve.front().threshold);
    CHECK(curve.front().tp + curve.front().fp == static_cast<long>(base.size()));

    std::vector<double> unsorted = {0.5, 0.3};
    CHECK_THROWS(detect::pr_curve(hm, truths, unsorted, 5.0));
    CHECK_THROWS(detect::pr_curve(hm, truths, {}, 5.0));
}

TEST_CASE("pr_curve keeps one segmentation when blobs split at higher thresholds") {
    // Two peaks joined by a low bridge: a single component at the lowest
    // threshold that separates into two above the bridge value. Re-segmenting
    // per threshold would let recall rise mid-curve; sweeping the fixed base
    // segmentation by score cannot.
    std::vector<float> v(30 * 30, 0.0f);
    auto square = [&](int cx, int cy, float val) {
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
                v[(cy + dy) * 30 + cx + dx] = val;
    };
    square(8, 10, 0.5f);
    square(21, 10, 0.72f);
    for (int x = 10; x <= 19; ++x) v[10 * 30 + x] = 0.1f;
    raster::PointLabelSet truths;
    truths.observer_id = "t";
    truths.points.push_back({8.0, 10.0});
    truths.points.push_back({21.0, 10.0});
    auto hm = heatmap_from(v, 30, 30);

    // At 0.05 everything is one blob whose weighted centroid sits in the
    // bridge, too far from either truth to match. At 0.2 re-extraction would
    // find both peaks separately and match them.
    REQUIRE(detect::extract_detections(hm, 0.05).size() == 1);
    REQUIRE(detect::extract_detections(hm, 0.2).size() == 2);
    const auto m2 = detect::match_points(detect::extract_detections(hm, 0.2),
                                         truths.points, 5.0);
    REQUIRE(m2.pairs.size() == 2);

    const auto curve = detect::pr_curve(hm, truths, detect::default_thresholds(), 5.0);
    for (std::size_t i = 1; i < curve.size(); ++i)
        CHECK(curve[i].recall <= curve[i - 1].recall);
    for (const auto& p : curve) {
        CHECK(p.tp + p.fn == 2); // counts stay consistent with the truth set
        CHECK(p.tp == 0);        // the merged centroid never matches
        // The merged blob carries its peak score (0.72), so it survives the
        // sweep through the 0.7 row and is gone from 0.75 on.
        CHECK(p.fp == (p.threshold <= 0.7 ? 1 : 0));
    }
}

TEST_CASE("average_precision integrates the curve trapezoidally") {
    std::vector<detect::PRPoint> pts;
    pts.push_back(detect::pr_from_counts(0.8, 2, 0, 8)); // r=0.2, p=1.0
    pts.push_back(detect::pr_from_counts(0.5, 5, 5, 5)); // r=0.5, p=0.5
    pts.push_back(detect::pr_from_counts(0.2, 8, 8, 2)); // r=0.8, p=0.5
    // Anchor 0..0.2 at p=1.0, then trapezoids: 0.3*(0.75) + 0.3*(0.5).
    const double expected = 0.2 * 1.0 + 0.3 * 0.75 + 0.3 * 0.5;
    CHECK(detect::average_precision(pts) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(detect::average_precision({}) == 0.0);
}

TEST_CASE("detection and pr csv files are written with exact values") {
    const auto dir = fs::temp_directory_path() / "petrel_detect_csv";
    fs::create_directories(dir);
    const std::string dpath = (dir / "d.csv").string();
    detect::save_detections_csv({{1.5, 2.25, 0.875}}, dpath);
    std::ifstream f(dpath);
    std::string line;
    std::getline(f, line);
    CHECK(line == "x,y,score");
    std::getline(f, line);
    CHECK(line == "1.5,2.25,0.875");

    const std::string ppath = (dir / "p.csv").string();
    detect::save_pr_csv({detect::pr_from_counts(0.45, 752, 157, 183)}, ppath);
    std::ifstream pf(ppath);
    std::getline(pf, line);
    CHECK(line == "threshold,tp,fp,fn,precision,recall");
    std::getline(pf, line);
    CHECK(line.substr(0, 16) == "0.45,752,157,183");
    fs::remove_all(dir);
}
