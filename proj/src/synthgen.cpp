#include "petrel/synthgen.hpp"

#include "petrel/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace petrel::synth {

namespace {

double hash01(std::uint64_t seed, int octave, long gx, long gy) {
    std::uint64_t h = seed;
    h ^= 0xA0761D6478BD642FULL * static_cast<std::uint64_t>(octave + 1);
    h ^= 0xE7037ED1A0B428DBULL * static_cast<std::uint64_t>(gx + 0x40000000L);
    h ^= 0x8EBC6AF09C88C6E3ULL * static_cast<std::uint64_t>(gy + 0x20000000L);
    rng::splitmix64(h);
    return (rng::splitmix64(h) >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(std::uint64_t seed, int octave, double x, double y, double cell) {
    const double u = x / cell, v = y / cell;
    const long gx = static_cast<long>(std::floor(u));
    const long gy = static_cast<long>(std::floor(v));
    const double fx = smoothstep(u - gx), fy = smoothstep(v - gy);
    const double v00 = hash01(seed, octave, gx, gy);
    const double v10 = hash01(seed, octave, gx + 1, gy);
    const double v01 = hash01(seed, octave, gx, gy + 1);
    const double v11 = hash01(seed, octave, gx + 1, gy + 1);
    return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
}

double octave_noise(std::uint64_t seed, double x, double y, double base_cell) {
    double total = 0.0, ampsum = 0.0, amp = 1.0, cell = base_cell;
    for (int o = 0; o < 3; ++o) {
        total += amp * value_noise(seed, o, x, y, cell);
        ampsum += amp;
        amp *= 0.5;
        cell = std::max(2.0, cell * 0.5);
    }
    return total / ampsum;
}

void add_blob(float* plane, int w, int h, double cx, double cy, double amp, double sigma) {
    const double trunc = 3.0 * sigma;
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - trunc)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + trunc)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - trunc)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + trunc)));
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            if (d2 > trunc * trunc) continue;
            plane[static_cast<std::size_t>(y) * w + x] +=
                static_cast<float>(amp * std::exp(-d2 * inv2s2));
        }
    }
}

void clamp01(std::vector<float>& pixels) {
    for (float& v : pixels) v = std::clamp(v, 0.0f, 1.0f);
}

} // namespace

Scene generate_scene(const SceneSpec& spec) {
    constexpr int kFactor = 4; // pan resolution / ms resolution
    if (spec.width <= 0 || spec.height <= 0 || spec.width % kFactor != 0 ||
        spec.height % kFactor != 0)
        throw std::runtime_error("scene: width/height must be positive multiples of 4");
    if (spec.n_birds < 0 || spec.n_distractors < 0 || spec.bird_radius_px <= 0.0)
        throw std::runtime_error("scene: negative object count or radius");
    if (2 * spec.edge_margin_px >= std::min(spec.width, spec.height) &&
        (spec.n_birds > 0 || spec.n_distractors > 0))
        throw std::runtime_error("scene: edge margin leaves no room for objects");

    const int W = spec.width, H = spec.height;
    const int mw = W / kFactor, mh = H / kFactor;
    const double sigma = spec.bird_radius_px / 2.0;

    // Background planes from independent seeded noise fields.
    raster::Raster pan = raster::Raster::make(W, H, {"pan"});
    {
        const std::uint64_t s = rng::derive(spec.seed, 101);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                pan.plane(0)[static_cast<std::size_t>(y) * W + x] = static_cast<float>(
                    0.08 + 0.37 * octave_noise(s, x, y, spec.background_texture_scale));
    }
    raster::Raster ms = raster::Raster::make(mw, mh, {"blue", "green", "red", "nir1"});
    const struct {
        double lo, span;
    } ms_range[4] = {{0.08, 0.10}, {0.30, 0.25}, {0.10, 0.12}, {0.20, 0.20}};
    for (int b = 0; b < 4; ++b) {
        const std::uint64_t s = rng::derive(spec.seed, 201 + b);
        const double cell = std::max(2.0, spec.background_texture_scale / kFactor);
        float* p = ms.plane(b);
        for (int y = 0; y < mh; ++y)
            for (int x = 0; x < mw; ++x)
                p[static_cast<std::size_t>(y) * mw + x] = static_cast<float>(
                    ms_range[b].lo + ms_range[b].span * octave_noise(s, x, y, cell));
    }

    // Object placement with pairwise separation, shared by birds and
    // distractors so nothing overlaps a real bird.
    const double min_sep = 2.0 * spec.bird_radius_px + 2.0;
    const int total = spec.n_birds + spec.n_distractors;
    std::vector<std::pair<double, double>> centers;
    centers.reserve(total);
    {
        rng::Stream place(rng::derive(spec.seed, 301));
        const double lo_x = spec.edge_margin_px, hi_x = W - spec.edge_margin_px;
        const double lo_y = spec.edge_margin_px, hi_y = H - spec.edge_margin_px;
        long attempts_left = 1000L * std::max(1, total);
        while (static_cast<int>(centers.size()) < total) {
            if (attempts_left-- <= 0)
                throw std::runtime_error("scene: cannot place " + std::to_string(total) +
                                         " objects with separation " +
                                         std::to_string(min_sep));
            // Snap near pixel centers so the center pixel carries the peak.
            double cx = std::floor(place.uniform(lo_x, hi_x)) + place.uniform(-0.25, 0.25);
            double cy = std::floor(place.uniform(lo_y, hi_y)) + place.uniform(-0.25, 0.25);
            bool ok = true;
            for (const auto& c : centers) {
                const double dx = c.first - cx, dy = c.second - cy;
                if (dx * dx + dy * dy < min_sep * min_sep) {
                    ok = false;
                    break;
                }
            }
            if (ok) centers.emplace_back(cx, cy);
        }
    }

    raster::PointLabelSet truth;
    truth.observer_id = "truth";
    {
        rng::Stream amps(rng::derive(spec.seed, 401));
        const double msig = std::max(0.75, sigma / kFactor);
        for (int i = 0; i < spec.n_birds; ++i) {
            const auto [cx, cy] = centers[i];
            const double amp = amps.uniform(0.85, 1.0);
            add_blob(pan.plane(0), W, H, cx, cy, amp, sigma);
            // Birds read as white: every color band brightens under the dot.
            for (int b = 0; b < 4; ++b)
                add_blob(ms.plane(b), mw, mh, cx / kFactor, cy / kFactor, 0.55 * amp, msig);
            truth.points.push_back({cx, cy});
        }
        const int red_band = ms.band_index("red");
        for (int i = 0; i < spec.n_distractors; ++i) {
            const auto [cx, cy] = centers[spec.n_birds + i];
            const double amp = amps.uniform(0.85, 1.0);
            if (i % 2 == 0) {
                // Bright but red-signatured blob: bird-sized in pan, wrong color.
                add_blob(pan.plane(0), W, H, cx, cy, amp, sigma);
                add_blob(ms.plane(red_band), mw, mh, cx / kFactor, cy / kFactor, 0.5, msig);
            } else {
                // Sub-bird-size bright speck, no color signature.
                add_blob(pan.plane(0), W, H, cx, cy, amp, 0.35 * sigma);
            }
        }
    }
    clamp01(pan.pixels);
    clamp01(ms.pixels);

    Scene out;
    out.image = raster::upsample_ms_to_pan(ms, pan);
    out.truth = truth;
    raster::validate(out.truth, W, H);
    return out;
}

raster::PointLabelSet simulate_observer(const raster::PointLabelSet& truth,
                                        const raster::Raster& image,
                                        const ObserverModel& model,
                                        const std::string& observer_id) {
    if (model.miss_rate < 0.0 || model.miss_rate > 1.0 || model.false_alarm_density < 0.0 ||
        model.jitter_sigma_px < 0.0)
        throw std::runtime_error("observer: parameter outside valid range");
    raster::validate(truth, image.width, image.height);

    raster::PointLabelSet out;
    out.observer_id = observer_id;
    rng::Stream keep(rng::derive(model.seed, 11));
    rng::Stream jit(rng::derive(model.seed, 12));
    rng::Stream fa(rng::derive(model.seed, 13));

    const double max_x = image.width - 1.0, max_y = image.height - 1.0;
    for (const auto& p : truth.points) {
        if (keep.uniform() < model.miss_rate) continue;
        double x = p.x, y = p.y;
        if (model.jitter_sigma_px > 0.0) {
            x += model.jitter_sigma_px * jit.normal();
            y += model.jitter_sigma_px * jit.normal();
        }
        out.points.push_back({std::clamp(x, 0.0, max_x), std::clamp(y, 0.0, max_y)});
    }
    const double megapixels =
        static_cast<double>(image.width) * image.height / 1e6;
    const long n_false = fa.poisson(model.false_alarm_density * megapixels);
    for (long i = 0; i < n_false; ++i) {
        const double x = fa.uniform(0.0, image.width);
        const double y = fa.uniform(0.0, image.height);
        out.points.push_back({x, y});
    }
    return out;
}

GenerateSpec parse_generate_spec(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("generate spec: invalid JSON: " + std::string(e.what()));
    }
    GenerateSpec g;
    try {
        const auto& s = j.at("scene");
        g.scene.width = s.at("width").get<int>();
        g.scene.height = s.at("height").get<int>();
        g.scene.n_birds = s.at("n_birds").get<int>();
        g.scene.bird_radius_px = s.value("bird_radius_px", g.scene.bird_radius_px);
        g.scene.n_distractors = s.value("n_distractors", 0);
        g.scene.background_texture_scale =
            s.value("background_texture_scale", g.scene.background_texture_scale);
        g.scene.edge_margin_px = s.value("edge_margin_px", g.scene.edge_margin_px);
        g.scene.seed = s.value("seed", std::uint64_t{0});
        if (j.contains("observers")) {
            for (const auto& o : j.at("observers")) {
                ObserverModel m;
                m.miss_rate = o.value("miss_rate", 0.0);
                m.false_alarm_density = o.value("false_alarm_density", 0.0);
                m.jitter_sigma_px = o.value("jitter_sigma_px", 0.0);
                m.seed = o.value("seed", std::uint64_t{0});
                g.observers.emplace_back(o.at("id").get<std::string>(), m);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("generate spec: missing or mistyped field: " +
                                 std::string(e.what()));
    }
    return g;
}

} // namespace petrel::synth
