#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "petrel/raster.hpp"
#include "petrel/rng.hpp"
#include "support/oracles.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

using namespace petrel;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("petrel_raster_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

raster::Raster random_raster(int w, int h, std::uint64_t seed,
                             std::vector<std::string> bands = {"pan"}) {
    raster::Raster r = raster::Raster::make(w, h, std::move(bands));
    rng::Stream s(seed);
    for (auto& p : r.pixels) p = static_cast<float>(s.uniform());
    return r;
}

} // namespace

TEST_CASE("raster save/load round-trips bit-exactly") {
    TempDir td;
    auto r = random_raster(13, 9, 1, {"pan", "blue", "green", "red", "nir1"});
    raster::save_raster(r, td / "a");
    auto r2 = raster::load_raster(td / "a");
    CHECK(r2.width == 13);
    CHECK(r2.height == 9);
    CHECK(r2.bands == r.bands);
    CHECK(r2.pixels == r.pixels);
    // The loader also accepts the header path itself.
    auto r3 = raster::load_raster((td / "a") + ".hdr.json");
    CHECK(r3.pixels == r.pixels);
}

TEST_CASE("raster loading rejects inconsistent header and payload") {
    TempDir td;
    auto r = random_raster(6, 4, 2);
    raster::save_raster(r, td / "a");

    SUBCASE("payload truncated") {
        fs::resize_file((td / "a") + ".bin", 6 * 4 * 4 - 4);
        CHECK_THROWS(raster::load_raster(td / "a"));
    }
    SUBCASE("header dimensions enlarged") {
        std::ifstream in((td / "a") + ".hdr.json");
        std::string h((std::istreambuf_iterator<char>(in)), {});
        in.close();
        auto pos = h.find("\"width\": 6");
        REQUIRE(pos != std::string::npos);
        h.replace(pos, 10, "\"width\": 7");
        std::ofstream out((td / "a") + ".hdr.json", std::ios::trunc);
        out << h;
        out.close();
        CHECK_THROWS(raster::load_raster(td / "a"));
    }
    SUBCASE("missing files") {
        CHECK_THROWS(raster::load_raster(td / "nonexistent"));
    }
}

TEST_CASE("raster validation rejects out-of-range and non-finite pixels") {
    auto r = random_raster(4, 4, 3);
    CHECK_NOTHROW(raster::validate(r));
    r.pixels[5] = 1.5f;
    CHECK_THROWS(raster::validate(r));
    r.pixels[5] = -0.1f;
    CHECK_THROWS(raster::validate(r));
    r.pixels[5] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS(raster::validate(r));
    r.pixels[5] = 0.5f;
    CHECK_NOTHROW(raster::validate(r));
    r.bands = {"pan", "pan"};
    CHECK_THROWS(raster::validate(r)); // duplicate band names, size mismatch too
}

TEST_CASE("label csv round-trips coordinates exactly") {
    TempDir td;
    raster::PointLabelSet ls;
    ls.observer_id = "obs_a";
    rng::Stream s(4);
    for (int i = 0; i < 50; ++i) ls.points.push_back({s.uniform(0, 97), s.uniform(0, 53)});
    raster::save_labels_csv(ls, td / "l.csv");
    auto ls2 = raster::load_labels_csv(td / "l.csv");
    CHECK(ls2.observer_id == "obs_a");
    REQUIRE(ls2.points.size() == 50);
    for (int i = 0; i < 50; ++i) {
        CHECK(ls2.points[i].x == ls.points[i].x);
        CHECK(ls2.points[i].y == ls.points[i].y);
    }
}

TEST_CASE("label csv rejects malformed content") {
    TempDir td;
    SUBCASE("wrong header") {
        std::ofstream f(td / "bad.csv");
        f << "id,x,y\na,1,2\n";
        f.close();
        CHECK_THROWS(raster::load_labels_csv(td / "bad.csv"));
    }
    SUBCASE("mixed observer ids") {
        std::ofstream f(td / "bad.csv");
        f << "observer_id,x,y\na,1,2\nb,3,4\n";
        f.close();
        CHECK_THROWS(raster::load_labels_csv(td / "bad.csv"));
    }
    SUBCASE("non-numeric coordinate") {
        std::ofstream f(td / "bad.csv");
        f << "observer_id,x,y\na,1,zzz\n";
        f.close();
        CHECK_THROWS(raster::load_labels_csv(td / "bad.csv"));
    }
    SUBCASE("empty label set still carries the header") {
        raster::PointLabelSet ls;
        ls.observer_id = "nobody";
        raster::save_labels_csv(ls, td / "empty.csv");
        auto back = raster::load_labels_csv(td / "empty.csv");
        CHECK(back.points.empty());
    }
}

TEST_CASE("label validation checks bounds and duplicates") {
    raster::PointLabelSet ls;
    ls.observer_id = "a";
    ls.points = {{1.0, 2.0}, {3.5, 0.0}};
    CHECK_NOTHROW(raster::validate(ls, 10, 10));
    ls.points.push_back({10.0, 2.0}); // x must stay below width
    CHECK_THROWS(raster::validate(ls, 10, 10));
    ls.points.back() = {1.0, 2.0}; // exact duplicate of the first point
    CHECK_THROWS(raster::validate(ls, 10, 10));
}

TEST_CASE("upsample_ms_to_pan matches the scalar bilinear formula") {
    rng::Stream s(5);
    raster::Raster ms = raster::Raster::make(4, 3, {"blue", "green"});
    for (auto& p : ms.pixels) p = static_cast<float>(s.uniform());
    raster::Raster pan = raster::Raster::make(8, 6, {"pan"});
    for (auto& p : pan.pixels) p = static_cast<float>(s.uniform());

    auto merged = raster::upsample_ms_to_pan(ms, pan);
    REQUIRE(merged.bands == std::vector<std::string>{"pan", "blue", "green"});
    REQUIRE(merged.width == 8);
    REQUIRE(merged.height == 6);
    for (std::size_t i = 0; i < pan.plane_size(); ++i)
        CHECK(merged.plane(0)[i] == pan.plane(0)[i]);
    for (int b = 0; b < 2; ++b) {
        std::vector<double> plane(ms.plane(b), ms.plane(b) + ms.plane_size());
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 8; ++x)
                CHECK(merged.at(1 + b, y, x) ==
                      doctest::Approx(oracle::bilinear_sample(plane, 3, 4, y, x))
                          .epsilon(1e-6));
    }
}

TEST_CASE("upsample_ms_to_pan keeps a constant band constant") {
    raster::Raster ms = raster::Raster::make(3, 3, {"blue"}, 0.37f);
    raster::Raster pan = raster::Raster::make(9, 9, {"pan"}, 0.5f);
    auto merged = raster::upsample_ms_to_pan(ms, pan);
    for (std::size_t i = 0; i < merged.plane_size(); ++i)
        CHECK(merged.plane(1)[i] == doctest::Approx(0.37f).epsilon(1e-7));
}

TEST_CASE("upsample_ms_to_pan validates factor and band structure") {
    raster::Raster ms = raster::Raster::make(4, 3, {"blue"});
    raster::Raster pan2 = raster::Raster::make(8, 9, {"pan"}); // 2x vs 3x factor
    CHECK_THROWS(raster::upsample_ms_to_pan(ms, pan2));
    raster::Raster pan_off = raster::Raster::make(9, 6, {"pan"}); // non-integer
    CHECK_THROWS(raster::upsample_ms_to_pan(ms, pan_off));
    raster::Raster two_band_pan = raster::Raster::make(8, 6, {"pan", "blue"});
    CHECK_THROWS(raster::upsample_ms_to_pan(ms, two_band_pan));
}

TEST_CASE("rasterize_labels stamps clipped 3x3 squares in window coordinates") {
    raster::PointLabelSet ls;
    ls.observer_id = "t";

    SUBCASE("centered label marks a full 3x3 square") {
        ls.points = {{12.3, 11.8}}; // rounds to (12,12)
        // Window origin (4,4), margin 2: output covers scene [6,14)x[6,14).
        auto t = raster::rasterize_labels(ls, 4, 4, 2, 8);
        int ones = 0;
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) ones += t[y * 8 + x];
        CHECK(ones == 9);
        // Center lands at output (6,6).
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) CHECK(t[(6 + dy) * 8 + 6 + dx] == 1);
    }
    SUBCASE("corner label clips to 4 pixels") {
        ls.points = {{6.2, 5.9}}; // rounds to (6,6) == output (0,0)
        auto t = raster::rasterize_labels(ls, 4, 4, 2, 8);
        int ones = 0;
        for (auto v : t) ones += v;
        CHECK(ones == 4);
        CHECK(t[0] == 1);
        CHECK(t[1] == 1);
        CHECK(t[8] == 1);
        CHECK(t[9] == 1);
    }
    SUBCASE("label outside the output window leaves it empty") {
        ls.points = {{5.0, 9.0}}; // inside the input window but inside the margin
        auto t = raster::rasterize_labels(ls, 4, 4, 2, 8);
        for (auto v : t) CHECK(v == 0);
    }
    SUBCASE("overlapping stamps merge") {
        ls.points = {{10.0, 10.0}, {11.0, 10.0}};
        auto t = raster::rasterize_labels(ls, 4, 4, 2, 8);
        int ones = 0;
        for (auto v : t) ones += v;
        CHECK(ones == 12); // 3x4 union, not 18
    }
}

TEST_CASE("crop_patch extracts the right window in every band") {
    auto r = random_raster(10, 8, 6, {"pan", "blue"});
    auto t = raster::crop_patch(r, 3, 2, 5);
    REQUIRE(t.shape() == ad::Shape{2, 5, 5});
    for (int b = 0; b < 2; ++b)
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 5; ++x)
                CHECK(t.values()[(b * 5 + y) * 5 + x] ==
                      static_cast<double>(r.at(b, 2 + y, 3 + x)));
    CHECK_THROWS(raster::crop_patch(r, 6, 0, 5));  // runs past the right edge
    CHECK_THROWS(raster::crop_patch(r, 0, 4, 5));  // runs past the bottom
    CHECK_THROWS(raster::crop_patch(r, -1, 0, 5));
}
