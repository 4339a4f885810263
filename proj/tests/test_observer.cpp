#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "petrel/observer.hpp"
#include "petrel/rng.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace petrel;

namespace {

raster::PointLabelSet labels(std::string id, std::vector<raster::PointLabel> pts) {
    raster::PointLabelSet s;
    s.observer_id = std::move(id);
    s.points = std::move(pts);
    return s;
}

// Well-separated grid (spacing 20 >> radius 5) with per-observer jitter,
// so matchings are unambiguous bijections on shared points.
std::vector<raster::PointLabel> grid_points(int nx, int ny, double jitter,
                                            std::uint64_t seed) {
    rng::Stream s(seed);
    std::vector<raster::PointLabel> pts;
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x)
            pts.push_back({10.0 + 20.0 * x + s.uniform(-jitter, jitter),
                           10.0 + 20.0 * y + s.uniform(-jitter, jitter)});
    return pts;
}

struct TempFile {
    std::filesystem::path path;
    explicit TempFile(const std::string& name) {
        path = std::filesystem::temp_directory_path() /
               ("petrel_obs_" + std::to_string(::getpid()) + "_" + name);
    }
    ~TempFile() { std::filesystem::remove(path); }
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("identical observers agree perfectly in every cell") {
    auto pts = grid_points(4, 3, 0.0, 1);
    obs::ObserverStudy study;
    study.label_sets = {labels("a", pts), labels("b", pts), labels("c", pts)};
    auto m = obs::observer_matrix(study);
    REQUIRE(m.ids == std::vector<std::string>{"a", "b", "c"});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(m.cells[i][j].precision == 1.0);
            CHECK(m.cells[i][j].recall == 1.0);
            CHECK(m.cells[i][j].tp == 12);
            CHECK(m.cells[i][j].fp == 0);
            CHECK(m.cells[i][j].fn == 0);
        }
}

TEST_CASE("a subset observer trades recall against precision") {
    auto pts = grid_points(4, 4, 0.0, 2);
    std::vector<raster::PointLabel> half(pts.begin(), pts.begin() + 8);
    obs::ObserverStudy study;
    study.label_sets = {labels("full", pts), labels("half", half)};
    auto m = obs::observer_matrix(study);
    // half as detections vs full as truth: everything it says is right,
    // but it misses half the points.
    CHECK(m.cells[1][0].precision == 1.0);
    CHECK(m.cells[1][0].recall == 0.5);
    CHECK(m.cells[1][0].fn == 8);
    // full as detections vs half as truth: the mirror image.
    CHECK(m.cells[0][1].precision == 0.5);
    CHECK(m.cells[0][1].recall == 1.0);
    CHECK(m.cells[0][1].fp == 8);
}

TEST_CASE("true-positive counts are symmetric for jittered copies") {
    obs::ObserverStudy study;
    study.label_sets = {labels("a", grid_points(5, 4, 1.5, 3)),
                        labels("b", grid_points(5, 4, 1.5, 4)),
                        labels("c", grid_points(5, 4, 1.5, 5))};
    auto m = obs::observer_matrix(study);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(m.cells[i][j].tp == m.cells[j][i].tp);
            // jitter < radius/2 keeps every pair matched
            CHECK(m.cells[i][j].tp == 20);
        }
}

TEST_CASE("one cell agrees with a hand-built matching") {
    // a: three points; b: hits the first two within radius, misses the
    // third, and adds one spurious point.
    auto a = labels("a", {{10, 10}, {40, 10}, {70, 10}});
    auto b = labels("b", {{12, 11}, {38, 13}, {100, 40}});
    obs::ObserverStudy study;
    study.label_sets = {a, b};
    study.radius = 5.0;
    auto m = obs::observer_matrix(study);
    CHECK(m.cells[1][0].tp == 2);
    CHECK(m.cells[1][0].fp == 1);
    CHECK(m.cells[1][0].fn == 1);
    CHECK(m.cells[1][0].precision == doctest::Approx(2.0 / 3.0));
    CHECK(m.cells[1][0].recall == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("a sharp heatmap at the shared points passes the range check") {
    auto pts = grid_points(4, 3, 0.0, 6);
    auto heat = raster::Raster::make(90, 70, {"prob"}, 0.0f);
    for (const auto& p : pts)
        heat.at(0, static_cast<int>(p.y), static_cast<int>(p.x)) = 0.9f;

    obs::ObserverStudy study;
    study.label_sets = {labels("a", pts), labels("b", pts), labels("c", pts)};
    study.heatmap = heat;
    auto report = obs::within_range_assessment(study);
    REQUIRE(report.entries.size() == 3);
    CHECK(report.passed == 3);
    for (const auto& e : report.entries) {
        CHECK(e.within);
        CHECK(e.min_precision == 1.0);
        CHECK(e.min_recall == 1.0);
        CHECK(e.margin == 0.0);
        CHECK(e.best_precision == 1.0);
        CHECK(e.best_recall == 1.0);
    }
}

TEST_CASE("an empty heatmap fails the range check at every truth set") {
    auto pts = grid_points(3, 3, 0.0, 7);
    obs::ObserverStudy study;
    study.label_sets = {labels("a", pts), labels("b", pts), labels("c", pts)};
    study.heatmap = raster::Raster::make(70, 70, {"prob"}, 0.0f);
    auto report = obs::within_range_assessment(study);
    CHECK(report.passed == 0);
    for (const auto& e : report.entries) {
        CHECK(!e.within);
        // no detections anywhere: precision stays 1 by convention, recall 0
        CHECK(e.best_recall == 0.0);
        CHECK(e.margin == doctest::Approx(-1.0));
    }
}

TEST_CASE("model curves are produced per observer over the default grid") {
    auto pts = grid_points(3, 2, 0.0, 8);
    obs::ObserverStudy study;
    study.label_sets = {labels("a", pts), labels("b", {pts[0], pts[1]})};
    auto heat = raster::Raster::make(70, 50, {"prob"}, 0.0f);
    for (const auto& p : pts)
        heat.at(0, static_cast<int>(p.y), static_cast<int>(p.x)) = 0.8f;
    study.heatmap = heat;
    auto curves = obs::model_vs_observers(study);
    REQUIRE(curves.size() == 2);
    const auto grid = detect::default_thresholds();
    for (const auto& c : curves) {
        REQUIRE(c.size() == grid.size());
        for (std::size_t k = 0; k < grid.size(); ++k)
            CHECK(c[k].threshold == grid[k]);
    }
    // Against "a" the model is perfect below 0.8; against the subset "b"
    // the extra four detections are false positives.
    CHECK(curves[0][0].precision == 1.0);
    CHECK(curves[0][0].recall == 1.0);
    CHECK(curves[1][0].precision == doctest::Approx(2.0 / 6.0));
    CHECK(curves[1][0].recall == 1.0);
}

TEST_CASE("study preconditions are enforced") {
    auto pts = grid_points(2, 2, 0.0, 9);
    obs::ObserverStudy one;
    one.label_sets = {labels("a", pts)};
    CHECK_THROWS(obs::observer_matrix(one));

    obs::ObserverStudy two;
    two.label_sets = {labels("a", pts), labels("b", pts)};
    CHECK_THROWS(obs::model_vs_observers(two));       // no heatmap
    CHECK_THROWS(obs::within_range_assessment(two));  // no heatmap
    two.heatmap = raster::Raster::make(50, 50, {"prob"}, 0.0f);
    CHECK_THROWS(obs::within_range_assessment(two));  // needs >= 3 sets
}

TEST_CASE("matrix CSV is truth-major with exact values") {
    auto pts = grid_points(2, 2, 0.0, 10);
    obs::ObserverStudy study;
    study.label_sets = {labels("a", pts), labels("b", {pts[0], pts[1]})};
    auto m = obs::observer_matrix(study);
    TempFile f("matrix.csv");
    obs::save_matrix_csv(m, f.path.string());
    const std::string text = slurp(f.path);
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    CHECK(line == "observer_as_truth,observer_as_detector,precision,recall");
    std::vector<std::string> rows;
    while (std::getline(in, line)) rows.push_back(line);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0] == "a,a,1,1");
    CHECK(rows[1] == "a,b,1,0.5");
    CHECK(rows[2] == "b,a,0.5,1");
    CHECK(rows[3] == "b,b,1,1");
}

TEST_CASE("report JSON round-trips the assessment") {
    auto pts = grid_points(3, 2, 0.0, 11);
    obs::ObserverStudy study;
    study.label_sets = {labels("a", pts), labels("b", pts), labels("c", pts)};
    auto heat = raster::Raster::make(70, 50, {"prob"}, 0.0f);
    for (const auto& p : pts)
        heat.at(0, static_cast<int>(p.y), static_cast<int>(p.x)) = 0.7f;
    study.heatmap = heat;
    auto report = obs::within_range_assessment(study);

    TempFile f("report.json");
    obs::save_report_json(report, f.path.string());
    auto j = nlohmann::json::parse(slurp(f.path));
    CHECK(j["passed"] == 3);
    CHECK(j["total"] == 3);
    REQUIRE(j["entries"].size() == 3);
    CHECK(j["entries"][0]["truth_id"] == "a");
    CHECK(j["entries"][0]["within"] == true);
    CHECK(j["entries"][0]["min_precision"] == 1.0);
    CHECK(j["entries"][0]["best_recall"] == 1.0);
    CHECK(j.contains("criterion"));
}
